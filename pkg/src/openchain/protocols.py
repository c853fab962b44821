"""Incoming-particle protocols: sampleable inflow processes with exact moments.

Four variants are supported: a constant vector, per-state independent finite
tables (i.i.d. across time), a single joint table over length-S count
vectors, and a Markov-modulated mixture of joint tables that introduces
temporal correlation while keeping stationary marginal moments closed-form.
All distributions have finite support, so sampling is exact and moments are
computed by direct summation.
"""

from __future__ import annotations

import abc
import itertools
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _pykernels
from ._rng import as_bit_generator
from .chain import _is_irreducible
from .errors import HiddenChainNotIrreducible, UnsupportedVariant

_PROB_TOL = 1e-12

MODE_CONSTANT = _pykernels.MODE_CONSTANT
MODE_IID_PRODUCT = _pykernels.MODE_IID_PRODUCT
MODE_JOINT_TABLE = _pykernels.MODE_JOINT_TABLE
MODE_MARKOV_MODULATED = _pykernels.MODE_MARKOV_MODULATED


@dataclass(frozen=True)
class ProtocolMoments:
    """First two moments of the stationary inflow marginal: mean and covariance."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.covariance, dtype=float)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match mean length")
        if np.abs(cov - cov.T).max(initial=0.0) > 1e-12:
            raise ValueError("covariance must be symmetric")
        if cov.size and np.diag(cov).min() < -1e-12:
            raise ValueError("covariance diagonal must be nonnegative")
        if cov.size and np.linalg.eigvalsh(cov).min() < -1e-10:
            raise ValueError("covariance must be positive semi-definite")


@dataclass(frozen=True)
class KernelProtocol:
    """Flattened protocol tables consumed by the simulation kernels."""

    mode: int
    const_vec: np.ndarray
    offsets: np.ndarray
    values: np.ndarray
    cums: np.ndarray
    support: np.ndarray
    table_cums: np.ndarray
    regime_offsets: np.ndarray
    hidden_cum: np.ndarray


def _empty_kernel_fields():
    return dict(
        const_vec=np.zeros(0, dtype=np.int64),
        offsets=np.zeros(0, dtype=np.int64),
        values=np.zeros(0, dtype=np.int64),
        cums=np.zeros(0, dtype=float),
        support=np.zeros((0, 0), dtype=np.int64),
        table_cums=np.zeros(0, dtype=float),
        regime_offsets=np.zeros(0, dtype=np.int64),
        hidden_cum=np.zeros((0, 0), dtype=float),
    )


def _check_probabilities(probs, what: str) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError(f"{what}: expected a nonempty probability vector")
    if np.any(p < 0):
        raise ValueError(f"{what}: probabilities must be nonnegative")
    total = p.sum()
    if abs(total - 1.0) > _PROB_TOL:
        raise ValueError(f"{what}: probabilities sum to {total!r}, not 1")
    return p / total


def _cumulative(probs: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs)
    cum[-1] = 1.0
    return cum


def _log_mean_exp(x, probs) -> float:
    """log sum_k p_k exp(x_k) with sum(p) = 1.

    Written as log1p(sum p_k expm1(x_k)) for small arguments so the value
    keeps full relative precision near 0 (finite-difference cumulant
    extraction divides by h^2 and would amplify any absolute rounding);
    falls back to max-shifted form to avoid overflow for large arguments.
    """
    x = np.asarray(x, dtype=float)
    if np.abs(x).max(initial=0.0) < 1.0:
        return float(np.log1p(probs @ np.expm1(x)))
    m = x.max()
    with np.errstate(over="ignore"):
        return float(m + np.log(probs @ np.exp(x - m)))


def _check_support_vectors(support, S: int) -> np.ndarray:
    sup = np.asarray(support)
    if sup.ndim != 2 or sup.shape[1] != S:
        raise ValueError(f"support must be a (K, {S}) array of count vectors")
    if not np.issubdtype(sup.dtype, np.integer):
        as_int = np.asarray(sup, dtype=np.int64)
        if np.any(as_int != sup):
            raise ValueError("support vectors must be integers")
        sup = as_int
    if np.any(sup < 0):
        raise ValueError("support vectors must be nonnegative")
    return np.ascontiguousarray(sup, dtype=np.int64)


class IncomingProtocol(abc.ABC):
    """Stationary inflow process: sampleable and summarizable by (eps, Delta)."""

    dimension: int

    @abc.abstractmethod
    def moments(self) -> ProtocolMoments:
        """Exact mean vector and single-time covariance of the stationary marginal."""

    @abc.abstractmethod
    def lag_covariance(self, s: int) -> np.ndarray:
        """Cov(J^t, J^{t+s}) under stationarity."""

    @abc.abstractmethod
    def log_mgf(self, alpha, allow_marginal: bool = False) -> float:
        """log E[exp(J . alpha)] of the single-time marginal."""

    @abc.abstractmethod
    def spec_dict(self) -> dict:
        """JSON-serializable description (used for fingerprints and configs)."""

    @abc.abstractmethod
    def _kernel_protocol(self) -> KernelProtocol:
        """Flattened arrays for the simulation kernels."""

    def initial_hidden(self, stream) -> int:
        """Initial hidden-regime index; -1 for memoryless variants."""
        return -1

    def sample(self, rng, hidden_state: Optional[int] = None):
        """One exact draw of J^t; returns (vector, next_hidden_state).

        ``rng`` is an integer seed, numpy BitGenerator, or Generator.  The
        hidden state is ignored by memoryless variants.
        """
        stream = _pykernels.UniformStream(as_bit_generator(rng))
        return self._sample_stream(stream, hidden_state)

    def _sample_stream(self, stream, hidden_state):
        proto = _pykernels._NativeProto(self._kernel_protocol())
        row = [0] * self.dimension
        hidden = -1 if hidden_state is None else int(hidden_state)
        hidden = _pykernels._draw_protocol(stream, proto, row, hidden)
        out = np.array(row, dtype=np.int64)
        return out, (hidden if hidden >= 0 else None)

    def sample_many(self, n: int, rng) -> np.ndarray:
        """Vectorized draws, equal in law and in stream to ``n`` sample() calls."""
        gen = np.random.Generator(as_bit_generator(rng))
        return self._sample_many(int(n), gen)

    def _sample_many(self, n: int, gen) -> np.ndarray:
        # generic fallback: repeated scalar draws
        stream = _pykernels.UniformStream(gen.bit_generator)
        hidden = self.initial_hidden(stream)
        out = np.empty((n, self.dimension), dtype=np.int64)
        proto = _pykernels._NativeProto(self._kernel_protocol())
        row = [0] * self.dimension
        for t in range(n):
            hidden = _pykernels._draw_protocol(stream, proto, row, hidden)
            out[t] = row
        return out


@dataclass(frozen=True)
class Constant(IncomingProtocol):
    """Fixed nonnegative integer inflow vector each step."""

    vector: np.ndarray

    def __post_init__(self):
        raw = np.asarray(self.vector)
        if raw.ndim != 1 or raw.size == 0:
            raise ValueError("constant inflow must be a nonempty vector")
        vec = _check_support_vectors(raw[None, :], raw.size)[0].copy()
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def dimension(self) -> int:
        return self.vector.size

    def moments(self) -> ProtocolMoments:
        S = self.dimension
        return ProtocolMoments(self.vector.astype(float), np.zeros((S, S)))

    def lag_covariance(self, s: int) -> np.ndarray:
        S = self.dimension
        return np.zeros((S, S))

    def log_mgf(self, alpha, allow_marginal: bool = False) -> float:
        return float(self.vector @ np.asarray(alpha, dtype=float))

    def spec_dict(self) -> dict:
        return {"variant": "constant", "vector": self.vector.tolist()}

    def _kernel_protocol(self) -> KernelProtocol:
        fields = _empty_kernel_fields()
        fields["const_vec"] = self.vector
        return KernelProtocol(mode=MODE_CONSTANT, **fields)

    def _sample_many(self, n: int, gen) -> np.ndarray:
        return np.tile(self.vector, (n, 1))


@dataclass(frozen=True)
class IidProduct(IncomingProtocol):
    """Per-state independent integer distributions, i.i.d. across time.

    ``tables[i]`` is a sequence of (value, probability) pairs with distinct
    nonnegative integer values.
    """

    tables: tuple

    def __post_init__(self):
        norm = []
        for i, table in enumerate(self.tables):
            pairs = [(int(v), float(p)) for v, p in table]
            values = np.array([v for v, _ in pairs], dtype=np.int64)
            if np.any(values < 0):
                raise ValueError(f"state {i}: support values must be nonnegative")
            if len(set(values.tolist())) != len(pairs):
                raise ValueError(f"state {i}: duplicate support values")
            probs = _check_probabilities([p for _, p in pairs], f"state {i}")
            order = np.argsort(values)
            norm.append((values[order], probs[order]))
        object.__setattr__(self, "tables", tuple(norm))

    @classmethod
    def bernoulli(cls, ps: Sequence[float]) -> "IidProduct":
        """Independent Bernoulli(p_i) arrivals per state."""
        tables = []
        for p in ps:
            p = float(p)
            if not 0.0 <= p <= 1.0:
                raise ValueError("Bernoulli parameters must lie in [0, 1]")
            if p == 0.0:
                tables.append(((0, 1.0),))
            elif p == 1.0:
                tables.append(((1, 1.0),))
            else:
                tables.append(((0, 1.0 - p), (1, p)))
        return cls(tuple(tables))

    @property
    def dimension(self) -> int:
        return len(self.tables)

    def moments(self) -> ProtocolMoments:
        S = self.dimension
        mean = np.zeros(S)
        var = np.zeros(S)
        for i, (values, probs) in enumerate(self.tables):
            v = values.astype(float)
            mean[i] = probs @ v
            var[i] = probs @ (v - mean[i]) ** 2
        return ProtocolMoments(mean, np.diag(var))

    def lag_covariance(self, s: int) -> np.ndarray:
        S = self.dimension
        return np.zeros((S, S))

    def log_mgf(self, alpha, allow_marginal: bool = False) -> float:
        alpha = np.asarray(alpha, dtype=float)
        total = 0.0
        for i, (values, probs) in enumerate(self.tables):
            total += _log_mean_exp(values * alpha[i], probs)
        return float(total)

    def spec_dict(self) -> dict:
        return {
            "variant": "iid_product",
            "tables": [
                [[int(v), float(p)] for v, p in zip(values, probs)]
                for values, probs in self.tables
            ],
        }

    def _kernel_protocol(self) -> KernelProtocol:
        fields = _empty_kernel_fields()
        sizes = [len(values) for values, _ in self.tables]
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)
        fields["offsets"] = offsets
        fields["values"] = np.concatenate([values for values, _ in self.tables])
        fields["cums"] = np.concatenate([_cumulative(probs) for _, probs in self.tables])
        return KernelProtocol(mode=MODE_IID_PRODUCT, **fields)

    def _sample_many(self, n: int, gen) -> np.ndarray:
        u = gen.random(n * self.dimension).reshape(n, self.dimension)
        out = np.empty((n, self.dimension), dtype=np.int64)
        for i, (values, probs) in enumerate(self.tables):
            idx = np.searchsorted(_cumulative(probs), u[:, i], side="right")
            out[:, i] = values[idx]
        return out


@dataclass(frozen=True)
class JointTable(IncomingProtocol):
    """One joint distribution over a finite set of count vectors, i.i.d. in time."""

    support: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        sup = np.atleast_2d(np.asarray(self.support))
        sup = _check_support_vectors(sup, sup.shape[1])
        probs = _check_probabilities(self.probabilities, "joint table")
        if probs.size != sup.shape[0]:
            raise ValueError("probabilities length must match support rows")
        order = np.lexsort(sup.T[::-1])
        sup = np.ascontiguousarray(sup[order])
        probs = probs[order]
        sup.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probabilities", probs)

    @property
    def dimension(self) -> int:
        return self.support.shape[1]

    def moments(self) -> ProtocolMoments:
        sup = self.support.astype(float)
        mean = self.probabilities @ sup
        centered = sup - mean
        cov = (centered * self.probabilities[:, None]).T @ centered
        return ProtocolMoments(mean, cov)

    def lag_covariance(self, s: int) -> np.ndarray:
        S = self.dimension
        return np.zeros((S, S))

    def log_mgf(self, alpha, allow_marginal: bool = False) -> float:
        x = self.support @ np.asarray(alpha, dtype=float)
        return _log_mean_exp(x, self.probabilities)

    def spec_dict(self) -> dict:
        return {
            "variant": "joint_table",
            "support": self.support.tolist(),
            "probabilities": self.probabilities.tolist(),
        }

    def _kernel_protocol(self) -> KernelProtocol:
        fields = _empty_kernel_fields()
        fields["support"] = self.support
        fields["table_cums"] = _cumulative(self.probabilities)
        fields["regime_offsets"] = np.array([0, len(self.probabilities)], dtype=np.int64)
        return KernelProtocol(mode=MODE_JOINT_TABLE, **fields)

    def _sample_many(self, n: int, gen) -> np.ndarray:
        u = gen.random(n)
        idx = np.searchsorted(_cumulative(self.probabilities), u, side="right")
        return self.support[idx]


@dataclass(frozen=True)
class MarkovModulated(IncomingProtocol):
    """Hidden Markov chain over regimes, each holding a JointTable.

    Each step draws the inflow from the current regime's table, then advances
    the hidden chain; the hidden chain must be irreducible so the marginal is
    stationary (started from its stationary distribution).
    """

    transition: np.ndarray
    regimes: tuple

    def __post_init__(self):
        T = np.asarray(self.transition, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1] or T.shape[0] < 1:
            raise ValueError("hidden transition matrix must be square")
        if np.any(T < 0) or np.abs(T.sum(axis=1) - 1.0).max() > _PROB_TOL:
            raise ValueError("hidden transition rows must be probability vectors")
        if len(self.regimes) != T.shape[0]:
            raise ValueError("one regime table per hidden state required")
        if not all(isinstance(r, JointTable) for r in self.regimes):
            raise ValueError("regimes must be JointTable protocols")
        dims = {r.dimension for r in self.regimes}
        if len(dims) != 1:
            raise ValueError("all regimes must share the same dimension")
        if not _is_irreducible(T > 0.0):
            raise HiddenChainNotIrreducible("hidden chain must be irreducible")
        T = np.ascontiguousarray(T)
        T.setflags(write=False)
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "regimes", tuple(self.regimes))

    @property
    def dimension(self) -> int:
        return self.regimes[0].dimension

    @property
    def n_regimes(self) -> int:
        return self.transition.shape[0]

    def stationary_hidden(self) -> np.ndarray:
        """Stationary distribution of the hidden chain (unique by irreducibility)."""
        M = self.n_regimes
        A = self.transition.T - np.eye(M)
        A[-1, :] = 1.0
        b = np.zeros(M)
        b[-1] = 1.0
        pi = np.linalg.solve(A, b)
        pi[pi < 0] = 0.0
        return pi / pi.sum()

    def moments(self) -> ProtocolMoments:
        # law of total covariance over the stationary hidden distribution
        pi = self.stationary_hidden()
        means = np.array([r.moments().mean for r in self.regimes])
        mean = pi @ means
        S = self.dimension
        cov = np.zeros((S, S))
        for m, regime in enumerate(self.regimes):
            dm = means[m] - mean
            cov += pi[m] * (regime.moments().covariance + np.outer(dm, dm))
        return ProtocolMoments(mean, cov)

    def lag_covariance(self, s: int) -> np.ndarray:
        if s < 1:
            raise ValueError("lag must be a positive integer")
        pi = self.stationary_hidden()
        means = np.array([r.moments().mean for r in self.regimes])
        Ts = np.linalg.matrix_power(self.transition, s)
        mean = pi @ means
        # Cov(J^t, J^{t+s}) = sum_{m,m'} pi_m (T^s)_{m,m'} eps_m eps_{m'}^T - eps eps^T
        return means.T @ (pi[:, None] * Ts) @ means - np.outer(mean, mean)

    def log_mgf(self, alpha, allow_marginal: bool = False) -> float:
        if not allow_marginal:
            raise UnsupportedVariant(
                "modulated protocols are not i.i.d.; pass allow_marginal=True "
                "to evaluate the stationary single-time marginal"
            )
        import warnings

        warnings.warn(
            "using the stationary single-time marginal of a modulated protocol",
            stacklevel=2,
        )
        pi = self.stationary_hidden()
        vals = np.array([r.log_mgf(alpha) for r in self.regimes])
        return _log_mean_exp(vals, pi)

    def spec_dict(self) -> dict:
        return {
            "variant": "markov_modulated",
            "transition": self.transition.tolist(),
            "regimes": [r.spec_dict() for r in self.regimes],
        }

    def initial_hidden(self, stream) -> int:
        cum = _cumulative(self.stationary_hidden())
        return _pykernels.inverse_cdf(cum, 0, len(cum), stream.next())

    def _kernel_protocol(self) -> KernelProtocol:
        fields = _empty_kernel_fields()
        sizes = [len(r.probabilities) for r in self.regimes]
        offsets = np.zeros(len(sizes) + 1, dtype=np.int64)
        offsets[1:] = np.cumsum(sizes)
        fields["regime_offsets"] = offsets
        fields["support"] = np.ascontiguousarray(
            np.concatenate([r.support for r in self.regimes]), dtype=np.int64
        )
        fields["table_cums"] = np.concatenate(
            [_cumulative(r.probabilities) for r in self.regimes]
        )
        fields["hidden_cum"] = np.ascontiguousarray(
            np.stack([_cumulative(row) for row in self.transition])
        )
        return KernelProtocol(mode=MODE_MARKOV_MODULATED, **fields)


@dataclass(frozen=True)
class ProtocolSchedule:
    """Time-varying inflow: consecutive (duration, protocol) segments.

    Consumed per step by the cumulant recurrences; stationary analytics
    reject schedules.
    """

    segments: tuple

    def __post_init__(self):
        if not self.segments:
            raise ValueError("schedule needs at least one segment")
        segs = []
        for duration, proto in self.segments:
            duration = int(duration)
            if duration < 1:
                raise ValueError("segment durations must be positive")
            if not isinstance(proto, IncomingProtocol):
                raise ValueError("segments must hold IncomingProtocol instances")
            segs.append((duration, proto))
        dims = {p.dimension for _, p in segs}
        if len(dims) != 1:
            raise ValueError("all segments must share the same dimension")
        object.__setattr__(self, "segments", tuple(segs))

    @property
    def dimension(self) -> int:
        return self.segments[0][1].dimension

    @property
    def total_steps(self) -> int:
        return sum(d for d, _ in self.segments)

    def step_moments(self):
        """Yield one ProtocolMoments per step, in order."""
        for duration, proto in self.segments:
            m = proto.moments()
            for _ in range(duration):
                yield m


def moments(protocol: IncomingProtocol) -> ProtocolMoments:
    """Exact (eps, Delta) of the protocol's stationary marginal."""
    return protocol.moments()


def sample(protocol: IncomingProtocol, hidden_state, rng):
    """One exact draw of J^t; returns (vector, next_hidden_state)."""
    return protocol.sample(rng, hidden_state)


def protocol_lag_covariance(protocol: IncomingProtocol, s: int) -> np.ndarray:
    """Cov(J^t, J^{t+s}) under stationarity; zero for memoryless variants."""
    if s < 1:
        raise ValueError("lag must be a positive integer")
    return protocol.lag_covariance(int(s))


def three_state_example(p: float) -> JointTable:
    """Three-state correlated inflow: joint table f12(j1, j2) * f3(j3).

    The first two coordinates are dependent Bernoulli(1/2) variables that
    agree with probability p; the third is an independent fair Bernoulli.
    """
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    f12 = {(1, 1): p / 2, (0, 0): p / 2, (1, 0): (1 - p) / 2, (0, 1): (1 - p) / 2}
    support = []
    probs = []
    for j1, j2, j3 in itertools.product((0, 1), repeat=3):
        support.append((j1, j2, j3))
        probs.append(f12[(j1, j2)] * 0.5)
    return JointTable(np.array(support, dtype=np.int64), np.array(probs))
