"""Exact stochastic evolution of the particle counts.

Each step splits every state's population multinomially over the S
destinations plus the outside (the escape count is the (S+1)-th multinomial
category, not an independent binomial redraw, so per-step conservation holds
particle-by-particle), then adds the protocol inflow.  Runs are reproducible
bit-for-bit from (model, seed, horizon) regardless of the kernel backend.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from . import _pykernels, backend
from ._rng import GENERATOR_NAME, as_bit_generator, check_seed
from .chain import OpenChainModel
from .errors import NoConvergence, TruncationTooSmall
from .protocols import MarkovModulated

OVERFLOW_LIMIT = _pykernels.OVERFLOW_LIMIT


@dataclass(frozen=True)
class StepOutcome:
    """Result of one evolution step.

    ``retained[i, j]`` counts particles moving i -> j; per-state conservation
    ``retained.sum(axis=1) + outflow_per_state == previous counts`` holds by
    construction.
    """

    next: np.ndarray
    inflow: np.ndarray
    outflow_per_state: np.ndarray
    outflow_total: int
    retained: np.ndarray
    hidden_state: Optional[int] = None


@dataclass(frozen=True)
class SimulationRecord:
    """Seeded time series of counts, inflow, and outflow.

    Row t (0-based) holds the outcome of step t+1: counts are N^{t+1}, inflow
    J^t, outflow U^t.  Statistics should skip the first ``burn_in`` rows.
    """

    seed: int
    burn_in: int
    horizon: int
    initial: np.ndarray
    counts: np.ndarray
    inflow: np.ndarray
    outflow: np.ndarray
    outflow_total: np.ndarray
    model_fingerprint: str
    generator: str = GENERATOR_NAME

    @property
    def size(self) -> int:
        return self.counts.shape[1]

    def post_burn_in_counts(self) -> np.ndarray:
        return self.counts[self.burn_in :]

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "model_fingerprint": self.model_fingerprint,
            "horizon": self.horizon,
            "burn_in": self.burn_in,
            "generator": self.generator,
        }

    def write_manifest(self, path, extra: Optional[dict] = None) -> None:
        doc = self.manifest()
        if extra:
            doc.update(extra)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def to_csv(self, path, extra_comment: str = "") -> None:
        """Columns: t, N_1..N_S, J_1..J_S, U_1..U_S, O, burn_in_flag."""
        S = self.size
        header = (
            ["t"]
            + [f"N_{i + 1}" for i in range(S)]
            + [f"J_{i + 1}" for i in range(S)]
            + [f"U_{i + 1}" for i in range(S)]
            + ["O", "burn_in_flag"]
        )
        comment = f"# seed={self.seed} model={self.model_fingerprint} generator={self.generator}"
        if extra_comment:
            comment += " " + extra_comment
        t = np.arange(1, self.horizon + 1, dtype=np.int64)
        flag = (t <= self.burn_in).astype(np.int64)
        table = np.column_stack(
            [t, self.counts, self.inflow, self.outflow, self.outflow_total, flag]
        )
        with open(path, "w", newline="") as fh:
            fh.write(comment + "\n")
            fh.write(",".join(header) + "\n")
            np.savetxt(fh, table, fmt="%d", delimiter=",")


def as_counts(x, size: Optional[int] = None) -> np.ndarray:
    """Validate a vector of nonnegative particle counts."""
    arr = np.asarray(x)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("counts must form a nonempty vector")
    out = np.asarray(arr, dtype=np.int64)
    if np.any(out != arr):
        raise ValueError("counts must be integers")
    if np.any(out < 0):
        raise ValueError("counts must be nonnegative")
    if out.max() > OVERFLOW_LIMIT:
        raise OverflowError("counts exceed 2**62")
    if size is not None and out.size != size:
        raise ValueError(f"expected {size} states, got {out.size}")
    return out


def multinomial_split(n: int, probabilities, rng, backend_name: Optional[str] = None) -> np.ndarray:
    """Exact multinomial draw by the conditional-binomial chain.

    ``probabilities`` must be nonnegative and sum to 1 within 1e-12 (it is
    renormalized).  The components of the result always sum to ``n``.
    """
    n = int(n)
    if n < 0:
        raise ValueError("n must be nonnegative")
    p = np.ascontiguousarray(probabilities, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probabilities must form a nonempty vector")
    if np.any(p < 0):
        raise ValueError("probabilities must be nonnegative")
    total = p.sum()
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"probabilities sum to {total!r}, not 1")
    p = p / total
    kern = backend.get_kernels(backend_name)
    return kern.multinomial_split_seeded(as_bit_generator(rng), n, p)


def step(model: OpenChainModel, current, hidden_state, rng) -> StepOutcome:
    """One exact evolution step from ``current`` counts.

    For each state i the occupancy splits as a single multinomial over the S
    destinations plus the outside; the inflow is then drawn from the model's
    protocol.  Uses the pure-Python kernel (single steps are not hot); the
    uniform stream consumed matches run() step for step.
    """
    current = as_counts(current, model.size)
    stream = _pykernels.UniformStream(as_bit_generator(rng))
    hidden = -1 if hidden_state is None else int(hidden_state)
    nxt, J, U, retained, hidden = _pykernels.step_arrays(
        stream,
        model.jump.entries,
        model.escape.escape_vector,
        model.protocol._kernel_protocol(),
        current,
        hidden,
        with_retained=True,
    )
    if __debug__:
        assert np.array_equal(retained.sum(axis=1) + U, current)
        assert np.array_equal(nxt, J + retained.sum(axis=0))
    return StepOutcome(
        next=nxt,
        inflow=J,
        outflow_per_state=U,
        outflow_total=int(U.sum()),
        retained=retained,
        hidden_state=hidden if hidden >= 0 else None,
    )


def run(
    model: OpenChainModel,
    horizon: int,
    *,
    seed: int,
    initial=None,
    burn_in: Optional[int] = None,
    backend_name: Optional[str] = None,
) -> SimulationRecord:
    """Simulate ``horizon`` steps from ``initial`` (default: empty chain).

    ``burn_in`` defaults to 10% of the horizon; burn-in rows are stored and
    flagged, and excluded from downstream statistics.  Identical (model,
    seed, horizon) reproduce identical records on every backend.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    if burn_in is None:
        burn_in = horizon // 10
    burn_in = int(burn_in)
    if not 0 <= burn_in < horizon:
        raise ValueError("burn_in must satisfy 0 <= burn_in < horizon")
    seed = check_seed(seed)
    S = model.size
    initial = as_counts(initial, S) if initial is not None else np.zeros(S, dtype=np.int64)

    bitgen = np.random.PCG64(seed)
    hidden0 = -1
    if isinstance(model.protocol, MarkovModulated):
        hidden0 = model.protocol.initial_hidden(_pykernels.UniformStream(bitgen))

    kern = backend.get_kernels(backend_name)
    N, J, U, _ = kern.run_chain(
        bitgen,
        np.ascontiguousarray(model.jump.entries, dtype=float),
        np.ascontiguousarray(model.escape.escape_vector, dtype=float),
        model.protocol._kernel_protocol(),
        initial,
        horizon,
        hidden0,
    )
    return SimulationRecord(
        seed=seed,
        burn_in=burn_in,
        horizon=horizon,
        initial=initial,
        counts=N,
        inflow=J,
        outflow=U,
        outflow_total=U.sum(axis=1),
        model_fingerprint=model.fingerprint(),
    )


def enumerate_one_vertex_stationary(p: float, q: float, truncation: int) -> np.ndarray:
    """Exact stationary distribution of the one-vertex chain on {0..M}.

    Builds the transition kernel K(k, n) = sum_{j+r=n} Bernoulli(p)(j) *
    Binomial(q, k)(r) on the truncated count space and power-iterates to its
    stationary vector.  Serves as the independent oracle for the one-vertex
    moments (and for adjudicating the sign of the stationary variance).

    Raises
    ------
    TruncationTooSmall
        If the stationary tail mass at the truncation bound exceeds 1e-12.
    """
    p = float(p)
    q = float(q)
    M = int(truncation)
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not 0.0 <= q < 1.0:
        raise ValueError("q must lie in [0, 1)")
    if M < 1:
        raise ValueError("truncation must be at least 1")

    # binom[k, r] = C(k, r) q^r (1-q)^(k-r)
    binom = np.zeros((M + 1, M + 1))
    for k in range(M + 1):
        for r in range(k + 1):
            binom[k, r] = comb(k, r) * q**r * (1.0 - q) ** (k - r)
    K = (1.0 - p) * binom
    K[:, 1:] += p * binom[:, :-1]
    # mass that would land at M+1 (k = M, r = M, j = 1) folds into the edge bin
    K[M, M] += p * binom[M, M]

    pi = np.full(M + 1, 1.0 / (M + 1))
    for _ in range(200_000):
        new = pi @ K
        new /= new.sum()
        delta = np.abs(new - pi).max()
        pi = new
        if delta < 1e-16:
            break
    else:
        raise NoConvergence("stationary power iteration did not converge")
    if pi[M] > 1e-12:
        raise TruncationTooSmall(
            f"tail mass {pi[M]!r} at truncation {M} exceeds 1e-12; increase truncation"
        )
    return pi
