"""Combination of dependent p-values with a scaled chi-square null."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

P_FLOOR = 1e-12
COVARIANCE_CUBIC = (3.263, 0.710, 0.027)


@dataclass(frozen=True, eq=False)
class CombinedResult:
    p_values: np.ndarray
    correlation: np.ndarray
    statistic: float
    scale: float
    dof: float
    p_value: float
    floored: bool = False
    independence_fallback: bool = False


def covariance_from_correlation(rho) -> np.ndarray:
    """Approximate covariance of -2 ln p_i and -2 ln p_j for test statistics with correlation rho."""
    rho = np.asarray(rho, dtype=np.float64)
    a, b, c = COVARIANCE_CUBIC
    return a * rho + b * rho**2 + c * rho**3


def fisher_combine(p_values) -> float:
    p = np.maximum(np.asarray(p_values, dtype=np.float64), P_FLOOR)
    return float(chi2.sf(-2.0 * np.log(p).sum(), 2 * len(p)))


def kost_combine(p_values, correlation) -> CombinedResult:
    p = np.asarray(p_values, dtype=np.float64).ravel()
    r = np.asarray(correlation, dtype=np.float64)
    n = len(p)
    if n == 0:
        raise ValueError("no p-values to combine")
    if r.shape != (n, n):
        raise ValueError(f"correlation matrix must be {n}x{n}, got {r.shape}")
    if np.any(~np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
        raise ValueError("p-values must lie in [0, 1]")
    floored = bool(np.any(p < P_FLOOR))
    p = np.maximum(p, P_FLOOR)
    stat = float(-2.0 * np.log(p).sum())
    mean = 2.0 * n
    upper = np.triu_indices(n, 1)
    var = 4.0 * n + 2.0 * float(covariance_from_correlation(r[upper]).sum())
    fallback = var <= 0
    if fallback:
        var = 4.0 * n
    scale = var / (2.0 * mean)
    dof = 2.0 * mean**2 / var
    return CombinedResult(p, r, stat, scale, dof, float(chi2.sf(stat / scale, dof)), floored, fallback)
