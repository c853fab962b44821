"""Static chain structure: jump-matrix validation, escape profile, spectral tools.

The chain is defined by a sub-stochastic "jump" matrix Q whose row deficits
1 - sum_j q_ij are the per-state escape probabilities to the reservoir.  A
valid jump matrix is nonnegative, has spectral radius strictly below one, and
its graph of positive entries is irreducible and aperiodic.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from math import gcd

import numpy as np

from .errors import (
    NegativeEntry,
    NoConvergence,
    NotAperiodic,
    NotIrreducible,
    RowSumExceedsOne,
    SpectralRadiusNotSubunit,
)

#: spectral radius must stay this far below 1 for the chain to be accepted
SPECTRAL_GAP = 1e-9

#: row sums may exceed 1 by at most this much (decimal-input slack); such
#: rows are renormalized, larger excesses are rejected
ROW_SUM_SLACK = 1e-12


@dataclass(frozen=True)
class JumpMatrix:
    """Validated S x S sub-stochastic matrix; build via :func:`validate_jump_matrix`."""

    entries: np.ndarray
    size: int
    rho: float

    def __post_init__(self):
        self.entries.setflags(write=False)


@dataclass(frozen=True)
class EscapeProfile:
    """Per-state escape probabilities e_i = 1 - sum_j q_ij and their diagonal embedding."""

    escape_vector: np.ndarray
    escape_matrix: np.ndarray

    def __post_init__(self):
        self.escape_vector.setflags(write=False)
        self.escape_matrix.setflags(write=False)


@dataclass(frozen=True)
class OpenChainModel:
    """An open Markov chain: jump matrix, derived escape profile, inflow protocol."""

    jump: JumpMatrix
    escape: EscapeProfile
    protocol: "IncomingProtocol"  # noqa: F821 - defined in openchain.protocols

    def __post_init__(self):
        S = self.jump.size
        if self.protocol.dimension != S:
            raise ValueError(
                f"protocol dimension {self.protocol.dimension} != state count {S}"
            )
        residual = np.abs(
            self.escape.escape_vector - (1.0 - self.jump.entries.sum(axis=1))
        ).max()
        if residual >= 1e-12:
            raise ValueError("escape profile does not match the jump matrix")

    @classmethod
    def from_matrix(cls, raw, protocol) -> "OpenChainModel":
        jump = validate_jump_matrix(raw)
        return cls(jump=jump, escape=escape_profile(jump), protocol=protocol)

    @property
    def size(self) -> int:
        return self.jump.size

    def fingerprint(self) -> str:
        """Content hash of the model (jump entries plus protocol spec)."""
        doc = {
            "jump": [[float(x) for x in row] for row in self.jump.entries],
            "protocol": self.protocol.spec_dict(),
        }
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _as_square_array(raw) -> np.ndarray:
    if isinstance(raw, JumpMatrix):
        return raw.entries
    m = np.asarray(raw, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix entries must be finite")
    return m


def _adjacency(m: np.ndarray) -> np.ndarray:
    return m > 0.0


def _is_irreducible(adj: np.ndarray) -> bool:
    """Strong connectivity via positivity of (I + A)^(S-1)."""
    S = adj.shape[0]
    if S == 1:
        return True
    reach = np.eye(S, dtype=np.int64) + adj.astype(np.int64)
    acc = np.eye(S, dtype=np.int64)
    k = S - 1
    base = reach
    while k:
        if k & 1:
            acc = np.clip(acc @ base, 0, 1)
        base = np.clip(base @ base, 0, 1)
        k >>= 1
    return bool(np.all(acc > 0))


def _graph_period(adj: np.ndarray) -> int:
    """Period of a strongly connected digraph; 1 when the graph has no cycle.

    Computed as the gcd over edges (u, v) of level[u] + 1 - level[v] with BFS
    levels from node 0.  An acyclic graph (only possible at S = 1 here, e.g.
    the one-vertex chain with q = 0) imposes no period constraint.
    """
    S = adj.shape[0]
    if not adj.any():
        return 1
    level = np.full(S, -1, dtype=np.int64)
    level[0] = 0
    frontier = [0]
    while frontier:
        nxt = []
        for u in frontier:
            for v in np.nonzero(adj[u])[0]:
                if level[v] < 0:
                    level[v] = level[u] + 1
                    nxt.append(int(v))
        frontier = nxt
    g = 0
    for u in range(S):
        if level[u] < 0:
            continue
        for v in np.nonzero(adj[u])[0]:
            if level[v] >= 0:
                g = gcd(g, int(level[u] + 1 - level[v]))
    return g if g > 0 else 1


def _strongly_connected_components(adj: np.ndarray) -> list[np.ndarray]:
    """Kosaraju's algorithm, iterative (no recursion-depth limit)."""
    S = adj.shape[0]
    order: list[int] = []
    seen = np.zeros(S, dtype=bool)
    for start in range(S):
        if seen[start]:
            continue
        stack = [(start, iter(np.nonzero(adj[start])[0]))]
        seen[start] = True
        while stack:
            node, it = stack[-1]
            advanced = False
            for v in it:
                v = int(v)
                if not seen[v]:
                    seen[v] = True
                    stack.append((v, iter(np.nonzero(adj[v])[0])))
                    advanced = True
                    break
            if not advanced:
                order.append(node)
                stack.pop()
    radj = adj.T
    comp = np.full(S, -1, dtype=np.int64)
    ncomp = 0
    for start in reversed(order):
        if comp[start] >= 0:
            continue
        stack2 = [start]
        comp[start] = ncomp
        while stack2:
            u = stack2.pop()
            for v in np.nonzero(radj[u])[0]:
                v = int(v)
                if comp[v] < 0:
                    comp[v] = ncomp
                    stack2.append(v)
        ncomp += 1
    return [np.nonzero(comp == c)[0] for c in range(ncomp)]


def spectral_radius(matrix, rel_tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Spectral radius of a nonnegative square matrix.

    Shifted power iteration on Q + I with Collatz-Wielandt brackets; the shift
    removes periodicity so the brackets converge geometrically for irreducible
    matrices.  Reducible or otherwise stalling inputs fall back to a
    strongly-connected-component decomposition (the Perron root of a
    nonnegative matrix is the maximum over its diagonal blocks), each block
    being irreducible by construction.

    Raises
    ------
    NoConvergence
        If the bracket gap has not closed after ``max_iter`` iterations.
    """
    A = _as_square_array(matrix)
    if np.any(A < 0):
        raise ValueError("spectral_radius requires a nonnegative matrix")
    est = _power_iteration_shifted(A, rel_tol, max_iter)
    if est is not None:
        return est
    # deflation fallback: block-triangularize by SCCs and take the block maximum
    comps = _strongly_connected_components(_adjacency(A))
    if len(comps) == 1:
        raise NoConvergence(
            f"power iteration did not reach rel_tol={rel_tol} in {max_iter} iterations"
        )
    rho = 0.0
    for nodes in comps:
        block = A[np.ix_(nodes, nodes)]
        if block.shape[0] == 1:
            rho = max(rho, float(block[0, 0]))
        else:
            rho = max(rho, spectral_radius(block, rel_tol, max_iter))
    return rho


def _power_iteration_shifted(A: np.ndarray, rel_tol: float, max_iter: int):
    S = A.shape[0]
    if S == 1:
        return float(A[0, 0])
    B = A + np.eye(S)
    v = np.full(S, 1.0 / S)
    for _ in range(max_iter):
        w = v @ B
        ratios = w / v
        hi = float(ratios.max())
        lo = float(ratios.min())
        if hi - lo <= rel_tol * hi:
            return 0.5 * (hi + lo) - 1.0
        v = w / w.sum()
        if not np.all(v > 0.0) or not np.all(np.isfinite(v)):
            return None  # iterate underflowed (reducible input); use the SCC fallback
    return None


def validate_jump_matrix(raw) -> JumpMatrix:
    """Validate a raw matrix as the jump matrix of an open chain.

    Checks, in order: nonnegativity, row sums (rows exceeding one by at most
    ``ROW_SUM_SLACK`` are renormalized, larger excesses rejected), spectral
    radius below ``1 - SPECTRAL_GAP``, irreducibility, and aperiodicity of the
    graph of positive entries.

    Raises
    ------
    NegativeEntry, RowSumExceedsOne, SpectralRadiusNotSubunit,
    NotIrreducible, NotAperiodic
    """
    m = _as_square_array(raw).copy()
    S = m.shape[0]
    if np.any(m < 0):
        i, j = np.argwhere(m < 0)[0]
        raise NegativeEntry(f"entry ({i},{j}) = {m[i, j]} is negative")
    row_sums = m.sum(axis=1)
    over = row_sums > 1.0 + ROW_SUM_SLACK
    if np.any(over):
        i = int(np.nonzero(over)[0][0])
        raise RowSumExceedsOne(f"row {i} sums to {row_sums[i]!r} > 1")
    clamp = row_sums > 1.0
    if np.any(clamp):
        m[clamp] /= row_sums[clamp, None]
        # nudge the largest entry so the float row sum is exactly 1 and the
        # escape probability of a clamped row comes out exactly 0
        for i in np.nonzero(clamp)[0]:
            for _ in range(4):
                diff = m[i].sum() - 1.0
                if diff == 0.0:
                    break
                m[i, np.argmax(m[i])] -= diff
    rho = spectral_radius(m)
    if rho >= 1.0 - SPECTRAL_GAP:
        raise SpectralRadiusNotSubunit(f"spectral radius {rho!r} is not < {1.0 - SPECTRAL_GAP}")
    adj = _adjacency(m)
    if not _is_irreducible(adj):
        raise NotIrreducible("graph of positive entries is not strongly connected")
    if _graph_period(adj) != 1:
        raise NotAperiodic(f"graph of positive entries has period {_graph_period(adj)}")
    return JumpMatrix(entries=m, size=S, rho=float(rho))


def escape_profile(jump: JumpMatrix) -> EscapeProfile:
    """Escape probabilities e_i = 1 - sum_j q_ij and the diagonal matrix E."""
    e = 1.0 - jump.entries.sum(axis=1)
    e[e < 0.0] = 0.0  # renormalized rows may leave -0.0 or a sub-ulp deficit
    return EscapeProfile(escape_vector=e, escape_matrix=np.diag(e))


def matrix_power(jump, k: int) -> np.ndarray:
    """Q^k by repeated squaring; Q^0 is the identity."""
    if k < 0:
        raise ValueError("k must be a nonnegative integer")
    m = jump.entries if isinstance(jump, JumpMatrix) else _as_square_array(jump)
    return np.linalg.matrix_power(m, k)
