"""Empirical estimators over simulation records and analytic-vs-empirical reports.

Standard errors come from batch means (contiguous blocks, default 50): the
count series is strongly autocorrelated, so naive i.i.d. errors would be far
too small.  Nonlinear statistics (correlations) get their errors from the
spread of per-batch estimates of the same statistic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import SeriesTooShort, ShapeMismatch, ZeroVarianceState
from .simulate import SimulationRecord

DEFAULT_BATCH_COUNT = 50


@dataclass(frozen=True)
class SeriesSummary:
    """Sample moments of the post-burn-in count series with batch-means errors."""

    sample_mean: np.ndarray
    sample_covariance: np.ndarray
    lag_covariances: Dict[int, np.ndarray]
    mean_se: np.ndarray
    covariance_se: np.ndarray
    lag_se: Dict[int, np.ndarray]
    n_samples: int
    batch_count: int
    batch_means: np.ndarray
    batch_covariances: np.ndarray
    batch_lag_covariances: Dict[int, np.ndarray]

    def to_dict(self) -> dict:
        return {
            "n_samples": self.n_samples,
            "batch_count": self.batch_count,
            "sample_mean": self.sample_mean.tolist(),
            "sample_covariance": self.sample_covariance.tolist(),
            "mean_se": self.mean_se.tolist(),
            "covariance_se": self.covariance_se.tolist(),
            "lag_covariances": {str(s): m.tolist() for s, m in self.lag_covariances.items()},
            "lag_se": {str(s): m.tolist() for s, m in self.lag_se.items()},
        }


def _lagged_cov(x: np.ndarray, mean: np.ndarray, s: int) -> np.ndarray:
    """C_hat(s)[i, j] = sum_t (x_i^t - m_i)(x_j^{t+s} - m_j) / (n - s - 1)."""
    n = x.shape[0]
    c = x - mean
    if s == 0:
        return c.T @ c / (n - 1)
    return c[:-s].T @ c[s:] / (n - s - 1)


def summarize(
    record: SimulationRecord,
    lags: Sequence[int] = (),
    batch_count: int = DEFAULT_BATCH_COUNT,
) -> SeriesSummary:
    """Sample mean/covariance/lag-covariances of the post-burn-in counts.

    Raises SeriesTooShort unless the record extends past
    burn_in + max(lags) + 10 * batch_count and each batch spans every lag.
    """
    lags = sorted(set(int(s) for s in lags))
    if any(s < 0 for s in lags):
        raise ValueError("lags must be nonnegative")
    max_lag = max(lags, default=0)
    batch_count = int(batch_count)
    if batch_count < 2:
        raise ValueError("batch_count must be at least 2")
    x = record.post_burn_in_counts().astype(float)
    n = x.shape[0]
    if n <= max_lag + 10 * batch_count:
        raise SeriesTooShort(
            f"need more than burn_in + {max_lag} + 10*{batch_count} steps, "
            f"got {n} post-burn-in samples"
        )
    batch_len = n // batch_count
    if batch_len <= max_lag + 2:
        raise SeriesTooShort(
            f"batches of {batch_len} samples cannot estimate lag {max_lag}"
        )

    mean = x.mean(axis=0)
    cov = _lagged_cov(x, mean, 0)
    lag_covs = {s: (cov if s == 0 else _lagged_cov(x, mean, s)) for s in lags}

    nb = batch_count
    S = x.shape[1]
    bmeans = np.empty((nb, S))
    bcovs = np.empty((nb, S, S))
    blags = {s: np.empty((nb, S, S)) for s in lags}
    for b in range(nb):
        xb = x[b * batch_len : (b + 1) * batch_len]
        mb = xb.mean(axis=0)
        bmeans[b] = mb
        bcovs[b] = _lagged_cov(xb, mb, 0)
        for s in lags:
            blags[s][b] = bcovs[b] if s == 0 else _lagged_cov(xb, mb, s)

    sq = np.sqrt(nb)
    mean_se = bmeans.std(axis=0, ddof=1) / sq
    cov_se = bcovs.std(axis=0, ddof=1) / sq
    lag_se = {s: blags[s].std(axis=0, ddof=1) / sq for s in lags}
    return SeriesSummary(
        sample_mean=mean,
        sample_covariance=cov,
        lag_covariances=lag_covs,
        mean_se=mean_se,
        covariance_se=cov_se,
        lag_se=lag_se,
        n_samples=n,
        batch_count=nb,
        batch_means=bmeans,
        batch_covariances=bcovs,
        batch_lag_covariances=blags,
    )


def _corr_from_cov(cov: np.ndarray, lag_cov: Optional[np.ndarray] = None) -> np.ndarray:
    d = np.diag(cov)
    if np.any(d <= 0):
        raise ZeroVarianceState("sample variance must be positive for correlations")
    scale = np.outer(np.sqrt(d), np.sqrt(d))
    if lag_cov is None:
        k = cov / scale
        np.fill_diagonal(k, 1.0)
        return k
    return lag_cov / scale


def empirical_correlations(summary: SeriesSummary) -> tuple:
    """(kappa_hat, {s: C~_hat(s)}) from the sample (lag-)covariances."""
    kappa = _corr_from_cov(summary.sample_covariance)
    time_corr = {
        s: (kappa if s == 0 else _corr_from_cov(summary.sample_covariance, c))
        for s, c in summary.lag_covariances.items()
    }
    return kappa, time_corr


def correlation_standard_errors(summary: SeriesSummary) -> tuple:
    """Batch-means errors for the empirical correlations of this summary."""
    nb = summary.batch_count
    bk = np.array([_corr_from_cov(c) for c in summary.batch_covariances])
    kappa_se = bk.std(axis=0, ddof=1) / np.sqrt(nb)
    time_se = {}
    for s, blags in summary.batch_lag_covariances.items():
        bt = np.array(
            [
                _corr_from_cov(summary.batch_covariances[b], None if s == 0 else blags[b])
                for b in range(nb)
            ]
        )
        time_se[s] = bt.std(axis=0, ddof=1) / np.sqrt(nb)
    return kappa_se, time_se


@dataclass(frozen=True)
class TolerancePolicy:
    """Verdict policy: pass iff |z| <= z_threshold, or |diff| <= abs_tol if set."""

    z_threshold: float = 4.0
    abs_tol: Optional[float] = None


@dataclass(frozen=True)
class ComparisonEntry:
    name: str
    analytic: float
    empirical: float
    se: float
    gating: bool = True


@dataclass(frozen=True)
class ComparisonRow:
    name: str
    analytic: float
    empirical: float
    se: float
    z: float
    verdict: str
    gating: bool


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple
    passed: bool
    policy: TolerancePolicy

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "policy": {
                "z_threshold": self.policy.z_threshold,
                "abs_tol": self.policy.abs_tol,
            },
            "rows": [
                {
                    "name": r.name,
                    "analytic": r.analytic,
                    "empirical": r.empirical,
                    "se": r.se,
                    "z": r.z,
                    "verdict": r.verdict,
                    "gating": r.gating,
                }
                for r in self.rows
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def render_table(self) -> str:
        headers = ["quantity", "analytic", "empirical", "se", "z", "verdict"]
        cells = [
            [
                r.name,
                repr(r.analytic),
                repr(r.empirical),
                repr(r.se),
                f"{r.z:.3f}",
                r.verdict if r.gating else r.verdict + " (diagnostic)",
            ]
            for r in self.rows
        ]
        widths = [max(len(h), *(len(row[i]) for row in cells)) for i, h in enumerate(headers)]
        lines = [
            "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
            "  ".join("-" * w for w in widths),
        ]
        lines += ["  ".join(row[i].ljust(widths[i]) for i in range(len(headers))) for row in cells]
        lines.append(f"overall: {'pass' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def compare(entries: Sequence[ComparisonEntry], policy: TolerancePolicy = TolerancePolicy()) -> ComparisonReport:
    """Per-entry z-scores and verdicts; the global flag ignores diagnostic rows."""
    rows = []
    passed = True
    for e in entries:
        diff = e.empirical - e.analytic
        if e.se > 0:
            z = diff / e.se
        else:
            z = 0.0 if diff == 0.0 else float("inf")
        ok = abs(z) <= policy.z_threshold
        if not ok and policy.abs_tol is not None:
            ok = abs(diff) <= policy.abs_tol
        rows.append(
            ComparisonRow(
                name=e.name,
                analytic=float(e.analytic),
                empirical=float(e.empirical),
                se=float(e.se),
                z=float(z),
                verdict="pass" if ok else "fail",
                gating=e.gating,
            )
        )
        if e.gating and not ok:
            passed = False
    return ComparisonReport(rows=tuple(rows), passed=passed, policy=policy)


def entries_from_arrays(
    name: str,
    analytic,
    empirical,
    se,
    gating: bool = True,
    symmetric: bool = False,
) -> List[ComparisonEntry]:
    """Flatten matching arrays into named entries ("name[i]" / "name[i,j]").

    With ``symmetric=True`` only the upper triangle of square matrices is
    emitted.  Raises ShapeMismatch when the shapes differ.
    """
    a = np.asarray(analytic, dtype=float)
    b = np.asarray(empirical, dtype=float)
    s = np.asarray(se, dtype=float)
    if a.shape != b.shape or a.shape != s.shape:
        raise ShapeMismatch(f"{name}: shapes {a.shape}, {b.shape}, {s.shape} differ")
    entries = []
    if a.ndim == 0:
        return [ComparisonEntry(name, float(a), float(b), float(s), gating)]
    if a.ndim == 1:
        return [
            ComparisonEntry(f"{name}[{i}]", float(a[i]), float(b[i]), float(s[i]), gating)
            for i in range(a.shape[0])
        ]
    if a.ndim == 2:
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                if symmetric and j < i:
                    continue
                entries.append(
                    ComparisonEntry(
                        f"{name}[{i},{j}]", float(a[i, j]), float(b[i, j]), float(s[i, j]), gating
                    )
                )
        return entries
    raise ShapeMismatch(f"{name}: arrays of dimension {a.ndim} are not supported")
