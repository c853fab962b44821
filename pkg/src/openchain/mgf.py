"""Moment-generating-function machinery and finite-difference cross-checks.

Everything runs in log space: the stationary m.g.f. is the absolutely
convergent sum  log G(alpha) = sum_r log F(H^(r)(alpha))  where H is the
one-step redistribution map

    H_i(alpha) = log(e_i + sum_j q_ij exp(alpha_j))
               = log1p(sum_j q_ij expm1(alpha_j)),

written in the second form so that H(0) = 0 holds exactly and evaluations
near 0 keep full relative precision (which the finite-difference cumulant
extraction depends on).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .chain import EscapeProfile, JumpMatrix, OpenChainModel
from .errors import NotContracting, StepTooLarge, ToleranceNotReached
from .protocols import IncomingProtocol

_CONTRACTION_CHECK_DEPTH = 8
_MAX_DEPTH = 100_000


@dataclass
class LogMgfEvaluator:
    """Evaluatable log-m.g.f. alpha -> log E[exp(N . alpha)] with metadata."""

    fn: Callable[[np.ndarray], float]
    dimension: int
    model_fingerprint: str
    truncation_depth: Optional[int]
    domain_radius: float

    def __call__(self, alpha) -> float:
        return self.fn(np.asarray(alpha, dtype=float))


def h_map(alpha, jump, escape: Optional[EscapeProfile] = None) -> np.ndarray:
    """Component-wise redistribution map H; H(0) = 0 exactly."""
    Q = jump.entries if isinstance(jump, JumpMatrix) else np.asarray(jump, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(over="ignore"):
        return np.log1p(Q @ np.expm1(alpha))


def iterate_h(alpha, r: int, jump, escape: Optional[EscapeProfile] = None) -> np.ndarray:
    """r-th iterate H^(r)(alpha); the identity at r = 0."""
    if r < 0:
        raise ValueError("iteration count must be nonnegative")
    out = np.asarray(alpha, dtype=float)
    for _ in range(int(r)):
        out = h_map(out, jump)
    return out


def c_map(alpha, escape: EscapeProfile) -> np.ndarray:
    """Escape-count map C_i(alpha_i) = log(1 - e_i + e_i exp(alpha_i)); C(0) = 0."""
    alpha = np.asarray(alpha, dtype=float)
    with np.errstate(over="ignore"):
        return np.log1p(escape.escape_vector * np.expm1(alpha))


def protocol_log_mgf(protocol: IncomingProtocol, alpha, allow_marginal: bool = False) -> float:
    """Exact log F(alpha) of the inflow marginal (finite support, log-sum-exp).

    Raises UnsupportedVariant for Markov-modulated protocols unless
    ``allow_marginal=True``, in which case the stationary single-time
    marginal is used and a warning is emitted.
    """
    return protocol.log_mgf(alpha, allow_marginal=allow_marginal)


def _check_contracting(alpha: np.ndarray, Q: np.ndarray) -> None:
    norm0 = float(np.abs(alpha).max(initial=0.0))
    if norm0 == 0.0:
        return
    it = alpha
    for _ in range(_CONTRACTION_CHECK_DEPTH):
        it = h_map(it, Q)
    norm8 = float(np.abs(it).max(initial=0.0))
    if not norm8 < norm0:
        raise NotContracting(
            f"H iterates do not decay by r={_CONTRACTION_CHECK_DEPTH} "
            f"(|alpha|={norm0!r} -> {norm8!r}); alpha is outside the contraction region"
        )


def log_stationary_mgf(
    model: OpenChainModel,
    alpha,
    tol: float = 1e-12,
    depth: Optional[int] = None,
) -> float:
    """Stationary log-m.g.f. sum_{r>=0} log F(H^(r)(alpha)).

    The sum is truncated once |log F(H^(R)(alpha))| < tol * (1 - rho), whose
    geometric tail then stays below tol.  Passing ``depth`` fixes the
    truncation instead, which keeps the evaluator perfectly smooth across
    finite-difference stencils.
    """
    alpha = np.asarray(alpha, dtype=float)
    Q = model.jump.entries
    _check_contracting(alpha, Q)
    threshold = tol * max(1.0 - model.jump.rho, 1e-12)
    total = 0.0
    it = alpha
    max_r = depth if depth is not None else _MAX_DEPTH
    for r in range(max_r + 1):
        term = model.protocol.log_mgf(it)
        total += term
        if depth is None and abs(term) < threshold:
            return total
        it = h_map(it, Q)
    if depth is not None:
        return total
    raise ToleranceNotReached(f"stationary m.g.f. sum did not reach tol={tol}")


def stationary_depth(model: OpenChainModel, radius: float, tol: float = 1e-12) -> int:
    """Truncation depth R sufficient for all |alpha|_inf <= radius."""
    alpha = np.full(model.size, float(radius))
    Q = model.jump.entries
    _check_contracting(alpha, Q)
    threshold = tol * max(1.0 - model.jump.rho, 1e-12)
    it = alpha
    for r in range(_MAX_DEPTH + 1):
        if abs(model.protocol.log_mgf(it)) < threshold:
            return r
        it = h_map(it, Q)
    raise ToleranceNotReached(f"no truncation depth reaches tol={tol}")


def log_mgf_at_time(model: OpenChainModel, alpha, t: int, initial_log_mgf) -> float:
    """log G_t via the recurrence log G_{t+1}(a) = log F(a) + log G_t(H(a)).

    Unrolled directly: log G_t(a) = initial(H^(t)(a)) + sum_{r=0}^{t-1}
    log F(H^(r)(a)).  ``initial_log_mgf`` maps alpha to the log-m.g.f. of
    N^0 (a deterministic N^0 gives alpha -> N^0 . alpha).
    """
    if t < 0:
        raise ValueError("time must be nonnegative")
    alpha = np.asarray(alpha, dtype=float)
    Q = model.jump.entries
    total = 0.0
    it = alpha
    for _ in range(int(t)):
        total += model.protocol.log_mgf(it)
        it = h_map(it, Q)
    return total + float(initial_log_mgf(it))


def outgoing_log_mgf(
    model: OpenChainModel,
    alpha,
    at_stationarity: bool = True,
    t: Optional[int] = None,
    initial_log_mgf=None,
    tol: float = 1e-12,
    depth: Optional[int] = None,
) -> float:
    """log-m.g.f. of the escape counts: the particle evaluator composed with C."""
    beta = c_map(np.asarray(alpha, dtype=float), model.escape)
    if at_stationarity:
        return log_stationary_mgf(model, beta, tol=tol, depth=depth)
    if t is None or initial_log_mgf is None:
        raise ValueError("transient evaluation requires t and initial_log_mgf")
    return log_mgf_at_time(model, beta, t, initial_log_mgf)


def stationary_log_mgf_evaluator(
    model: OpenChainModel,
    tol: float = 1e-12,
    domain_radius: float = 1e-3,
    outgoing: bool = False,
) -> LogMgfEvaluator:
    """Stationary evaluator with truncation depth fixed over its domain box.

    A fixed depth keeps the evaluator smooth in alpha (the adaptive stopping
    rule would make the truncation jump between stencil points, which
    finite differences amplify by 1/h^2).
    """
    # the C map shrinks |alpha|, so the particle-side depth covers outgoing too
    depth = stationary_depth(model, domain_radius, tol=tol)
    if outgoing:
        def fn(alpha: np.ndarray) -> float:
            return outgoing_log_mgf(model, alpha, tol=tol, depth=depth)
    else:
        def fn(alpha: np.ndarray) -> float:
            return log_stationary_mgf(model, alpha, tol=tol, depth=depth)
    return LogMgfEvaluator(
        fn=fn,
        dimension=model.size,
        model_fingerprint=model.fingerprint(),
        truncation_depth=depth,
        domain_radius=float(domain_radius),
    )


def numeric_cumulants(evaluator, h: float = 1e-4, dim: Optional[int] = None) -> tuple:
    """First two cumulants of a log-m.g.f. by central differences.

    Gradient and Hessian use second-order central stencils at steps h and
    h/2, combined by one level of Richardson extrapolation; raises
    StepTooLarge when the two levels disagree beyond 1e-5 (the evaluator is
    then too rough at this step size).  ``dim`` defaults to the evaluator's
    ``dimension`` attribute.
    """
    h = float(h)
    if h <= 0:
        raise ValueError("step must be positive")
    S = int(dim) if dim is not None else int(evaluator.dimension)
    f0 = float(evaluator(np.zeros(S)))

    def grad_hess(step: float):
        grad = np.zeros(S)
        hess = np.zeros((S, S))
        fp = np.zeros(S)
        fm = np.zeros(S)
        for i in range(S):
            ei = np.zeros(S)
            ei[i] = step
            fp[i] = float(evaluator(ei))
            fm[i] = float(evaluator(-ei))
            grad[i] = (fp[i] - fm[i]) / (2.0 * step)
            hess[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / (step * step)
        for i in range(S):
            for j in range(i + 1, S):
                eij = np.zeros(S)
                eij[i] = step
                eij[j] = step
                fpp = float(evaluator(eij))
                eij[j] = -step
                fpm = float(evaluator(eij))
                eij[i] = -step
                fmm = float(evaluator(eij))
                eij[j] = step
                fmp = float(evaluator(eij))
                hess[i, j] = hess[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * step * step)
        return grad, hess

    g1, h1 = grad_hess(h)
    g2, h2 = grad_hess(h / 2.0)
    grad = (4.0 * g2 - g1) / 3.0
    hess = (4.0 * h2 - h1) / 3.0
    disagreement = max(
        np.abs(grad - g2).max(initial=0.0), np.abs(hess - h2).max(initial=0.0)
    )
    if disagreement > 1e-5:
        raise StepTooLarge(
            f"Richardson levels disagree by {disagreement!r} > 1e-5 at h={h}"
        )
    hess = 0.5 * (hess + hess.T)
    return grad, hess
