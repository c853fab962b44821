"""Exact first- and second-cumulant analytics for open chains.

Transient recurrences (row-vector convention, mu on the left):

    mu'    = eps + mu Q
    Sigma' = Delta + Lambda(mu) + Q^T Sigma Q

with the multinomial noise matrix Lambda_{ij} = sum_k mu_k (q_ki delta_ij -
q_ki q_kj).  Stationary solutions, spatial/time correlations, lag
covariances, and outgoing-flux moments follow.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .chain import EscapeProfile, JumpMatrix, matrix_power
from .errors import (
    SingularSystem,
    ToleranceNotReached,
    ZeroVarianceState,
)
from .protocols import IncomingProtocol, ProtocolMoments, ProtocolSchedule


@dataclass(frozen=True)
class CumulantState:
    """Mean vector and covariance matrix of the particle counts at one time."""

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


@dataclass(frozen=True)
class OutgoingMoments:
    """Moments of the per-state escape counts U^t and the total outflow O_t."""

    mean_per_state: np.ndarray
    covariance: np.ndarray
    mean_total: float
    var_total: float


def _entries(jump) -> np.ndarray:
    return jump.entries if isinstance(jump, JumpMatrix) else np.asarray(jump, dtype=float)


def lambda_matrix(mean, jump, independent_binomial: bool = False) -> np.ndarray:
    """Multinomial noise matrix Lambda(mu).

    Lambda_{ij} = sum_k mu_k (q_ki delta_ij - q_ki q_kj).  The
    ``independent_binomial`` flag exposes the diagonal-only variant
    sum_k mu_k q_ki (1 - q_ki) delta_ij for diagnostics; the off-diagonal
    terms are measurable in simulation, so the multinomial form is the
    default everywhere.
    """
    Q = _entries(jump)
    mu = np.asarray(mean, dtype=float)
    if independent_binomial:
        return np.diag(mu @ (Q * (1.0 - Q)))
    return np.diag(mu @ Q) - Q.T @ (mu[:, None] * Q)


def cumulant_step(state: CumulantState, step_moments: ProtocolMoments, jump) -> CumulantState:
    """One step of the exact cumulant recurrences."""
    Q = _entries(jump)
    mu = state.mean
    new_mean = step_moments.mean + mu @ Q
    new_cov = step_moments.covariance + lambda_matrix(mu, Q) + Q.T @ state.covariance @ Q
    new_cov = 0.5 * (new_cov + new_cov.T)  # enforce exact symmetry against fp drift
    return CumulantState(mean=new_mean, covariance=new_cov)


def evolve_cumulants(
    state: CumulantState,
    source: Union[IncomingProtocol, ProtocolSchedule, Iterable[ProtocolMoments]],
    jump,
    steps: int,
) -> CumulantState:
    """Iterate the recurrences ``steps`` times.

    ``source`` may be a stationary protocol (same moments every step), a
    ProtocolSchedule, or any iterable of per-step ProtocolMoments.
    """
    steps = int(steps)
    if isinstance(source, IncomingProtocol):
        m = source.moments()
        for _ in range(steps):
            state = cumulant_step(state, m, jump)
        return state
    if isinstance(source, ProtocolSchedule):
        it = source.step_moments()
    else:
        it = iter(source)
    for _ in range(steps):
        state = cumulant_step(state, next(it), jump)
    return state


def stationary_mean(moments: ProtocolMoments, jump) -> np.ndarray:
    """Stationary mean mu_bar = eps (I - Q)^(-1), by direct linear solve."""
    Q = _entries(jump)
    eps = moments.mean
    S = Q.shape[0]
    try:
        mu = np.linalg.solve((np.eye(S) - Q).T, eps)
    except np.linalg.LinAlgError as exc:  # cannot occur for a validated JumpMatrix
        raise SingularSystem(str(exc)) from exc
    residual = np.abs(mu - eps - mu @ Q).max(initial=0.0)
    if residual >= 1e-10:
        raise SingularSystem(f"stationary-mean residual {residual!r} too large")
    return mu


def stationary_variance(moments: ProtocolMoments, jump, tol: float = 1e-12) -> np.ndarray:
    """Stationary covariance Sigma_bar = sum_k (Q^T)^k (Delta + Lambda_bar) Q^k.

    The series is summed until the additive term's max-norm drops below
    ``tol * (1 - rho^2)`` (geometric tail bound), then polished by fixed-point
    iterations of Sigma -> (Delta + Lambda_bar) + Q^T Sigma Q until the
    residual is below 1e-10.
    """
    Q = _entries(jump)
    rho = jump.rho if isinstance(jump, JumpMatrix) else float(np.abs(np.linalg.eigvals(Q)).max())
    mu = stationary_mean(moments, Q)
    M = moments.covariance + lambda_matrix(mu, Q)
    M = 0.5 * (M + M.T)
    sigma = np.zeros_like(M)
    term = M.copy()
    threshold = tol * max(1.0 - rho * rho, 1e-15)
    max_terms = 100_000
    for _ in range(max_terms):
        sigma += term
        if np.abs(term).max() < threshold:
            break
        term = Q.T @ term @ Q
    else:
        raise ToleranceNotReached(f"variance series did not reach tol={tol} in {max_terms} terms")
    for _ in range(64):
        polished = M + Q.T @ sigma @ Q
        polished = 0.5 * (polished + polished.T)
        residual = np.abs(polished - sigma).max()
        sigma = polished
        if residual < 1e-10:
            break
    else:
        raise ToleranceNotReached("fixed-point polish did not reach residual 1e-10")
    return sigma


def stationary_state(protocol_or_moments, jump, tol: float = 1e-12) -> CumulantState:
    """Stationary (mu_bar, Sigma_bar) as a CumulantState."""
    m = (
        protocol_or_moments
        if isinstance(protocol_or_moments, ProtocolMoments)
        else protocol_or_moments.moments()
    )
    return CumulantState(
        mean=stationary_mean(m, jump),
        covariance=stationary_variance(m, jump, tol=tol),
    )


def lag_covariance(sigma, jump, s: int) -> np.ndarray:
    """Cov(N^t, N^{t+s}) = Sigma_t Q^s (row-vector convention)."""
    if s < 0:
        raise ValueError("lag must be nonnegative")
    return np.asarray(sigma, dtype=float) @ matrix_power(jump, int(s))


def spatial_correlation(sigma) -> np.ndarray:
    """kappa_{ij} = Sigma_{ij} / sqrt(Sigma_{ii} Sigma_{jj}); unit diagonal."""
    sig = np.asarray(sigma, dtype=float)
    d = np.diag(sig)
    if np.any(d <= 0):
        raise ZeroVarianceState("correlations require positive per-state variances")
    scale = np.sqrt(d)
    kappa = sig / np.outer(scale, scale)
    np.fill_diagonal(kappa, 1.0)
    return kappa


def time_correlation(sigma_stat, jump, s: int) -> np.ndarray:
    """C~_{ij}(s) = (Sigma_bar Q^s)_{ij} / sqrt(Sigma_bar_{ii} Sigma_bar_{jj})."""
    sig = np.asarray(sigma_stat, dtype=float)
    d = np.diag(sig)
    if np.any(d <= 0):
        raise ZeroVarianceState("correlations require positive per-state variances")
    scale = np.sqrt(d)
    if s == 0:
        return spatial_correlation(sig)
    return lag_covariance(sig, jump, s) / np.outer(scale, scale)


def outgoing_moments(state: CumulantState, escape: EscapeProfile) -> OutgoingMoments:
    """Escape-count moments: E[U] = mu E, Var(U) = E Sigma E + D, and totals.

    D is diagonal with D_ii = mu_i e_i (1 - e_i); Var(O) = e Sigma e^T +
    mu (I - E) e^T equals the all-entries sum of Var(U).
    """
    e = escape.escape_vector
    mu = state.mean
    sigma = state.covariance
    mean_per_state = mu * e
    cov = (e[:, None] * sigma) * e[None, :] + np.diag(mu * e * (1.0 - e))
    return OutgoingMoments(
        mean_per_state=mean_per_state,
        covariance=cov,
        mean_total=float(mean_per_state.sum()),
        var_total=float(cov.sum()),
    )


def three_state_kappa(p: float, q: float) -> tuple:
    """Closed-form spatial correlations (kappa_12, kappa_13) of the symmetric
    three-state chain with correlated two-site inflow; kappa_23 = kappa_13 by
    symmetry.  Valid for 0 <= p <= 1 and 0 < q < 1/2.
    """
    p = float(p)
    q = float(q)
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not 0.0 < q < 0.5:
        raise ValueError("q must lie in (0, 1/2)")
    A = -8 * q**5 + (8 * p - 2) * q**4 + 4 * q**3 + 3 * q**2 + 4 * q + 1
    B = (6 - 8 * p) * q**4 + (4 * p + 1) * q**2 - 8 * q**5 + 4 * q**3 + 4 * q + 1
    k12 = (p * (-8 * q**4 - 4 * q**2 + 2) + 2 * q**4 + q**2 - 1) / np.sqrt(A**2)
    k13 = -2 * q**2 * (-p + q**2 + 1) / (np.sqrt(B) * np.sqrt(A))
    return float(k12), float(k13)
