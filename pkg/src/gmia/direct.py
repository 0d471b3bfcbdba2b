"""Direct membership inference: a left-tailed test of the target model's loss
against the loss distribution of reference models that never saw the record."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .datasets import Record
from .ensemble import Ensemble
from .model import ModelParams, loss_from_probability, predict


class DegenerateCdfWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LossSample:
    values: tuple[float, ...]
    record_id: str = ""
    source: str = ""

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise ValueError("a loss sample needs at least 2 values")
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise ValueError("losses must be finite and non-negative")
        object.__setattr__(self, "values", vals)


def pchip_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Shape-preserving cubic Hermite derivatives (weighted harmonic-mean limiter,
    one-sided three-point ends)."""
    h = np.diff(x)
    m = np.diff(y) / h
    n = len(x)
    d = np.zeros(n)
    if n == 2:
        d[:] = m[0]
        return d
    for i in range(1, n - 1):
        if m[i - 1] * m[i] <= 0:
            continue
        w1 = 2 * h[i] + h[i - 1]
        w2 = h[i] + 2 * h[i - 1]
        d[i] = (w1 + w2) / (w1 / m[i - 1] + w2 / m[i])
    d[0] = _edge_slope(h[0], h[1], m[0], m[1])
    d[-1] = _edge_slope(h[-1], h[-2], m[-1], m[-2])
    return d


def _edge_slope(h0, h1, m0, m1):
    d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1)
    if np.sign(d) != np.sign(m0):
        return 0.0
    if np.sign(m0) != np.sign(m1) and abs(d) > abs(3 * m0):
        return 3 * m0
    return d


def hermite_eval(x: np.ndarray, y: np.ndarray, d: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Evaluate the cubic Hermite interpolant at points inside [x[0], x[-1]]."""
    i = np.clip(np.searchsorted(x, t, side="right") - 1, 0, len(x) - 2)
    h = x[i + 1] - x[i]
    s = (t - x[i]) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * y[i] + h10 * h * d[i] + h01 * y[i + 1] + h11 * h * d[i + 1]


@dataclass(frozen=True, eq=False)
class CdfModel:
    """Smoothed empirical CDF of reference losses.

    Knots sit at the distinct sorted losses with plotting positions j/(k+1)
    (tied losses share the average position). Between knots a monotone cubic
    interpolates; below the smallest knot F falls linearly to 0 at loss 0,
    above the largest it rises linearly to 1 one knot-range further out.
    """

    knots: np.ndarray
    levels: np.ndarray
    slopes: np.ndarray
    k: int
    degenerate: bool = False

    def __call__(self, loss) -> np.ndarray | float:
        t = np.asarray(loss, dtype=np.float64)
        out = self._eval(np.atleast_1d(t))
        return float(out[0]) if t.ndim == 0 else out

    def _eval(self, t: np.ndarray) -> np.ndarray:
        x, f = self.knots, self.levels
        if self.degenerate:
            return np.where(t >= x[0], 1.0, 0.0)
        out = np.empty_like(t)
        lo, hi = x[0], x[-1]
        left = t < lo
        right = t > hi
        mid = ~(left | right)
        if lo > 0:
            out[left] = f[0] * np.clip(t[left], 0.0, None) / lo
        else:
            out[left] = 0.0
        span = hi - lo
        with np.errstate(over="ignore", invalid="ignore"):
            out[right] = f[-1] + (1.0 - f[-1]) * np.minimum(1.0, (t[right] - hi) / span)
            inner = hermite_eval(x, f, self.slopes, t[mid])
        # knots closer than float resolution make the cubic overflow; fall back to linear there
        bad = ~np.isfinite(inner)
        inner[bad] = np.interp(t[mid][bad], x, f)
        out[mid] = inner
        return np.clip(out, 0.0, 1.0)


def plotting_positions(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct sorted values and their (tie-averaged) positions j/(k+1)."""
    v = np.sort(np.asarray(values, dtype=np.float64), kind="stable")
    k = len(v)
    knots, inverse = np.unique(v, return_inverse=True)
    ranks = np.arange(1, k + 1, dtype=np.float64)
    pos = np.bincount(inverse, weights=ranks) / np.bincount(inverse)
    return knots, pos / (k + 1)


def fit_cdf(losses: LossSample | Sequence[float]) -> CdfModel:
    values = np.asarray(losses.values if isinstance(losses, LossSample) else losses, dtype=np.float64)
    if len(values) < 2 or not np.all(np.isfinite(values)):
        raise ValueError("fit_cdf needs at least 2 finite losses")
    knots, levels = plotting_positions(values)
    if len(knots) < 2:
        warnings.warn("all reference losses are equal; using a step CDF", DegenerateCdfWarning, stacklevel=2)
        return CdfModel(knots, levels, np.zeros(1), len(values), degenerate=True)
    return CdfModel(knots, levels, pchip_slopes(knots, levels), len(values))


@dataclass(frozen=True)
class HypothesisResult:
    record_id: str
    model_id: str
    statistic: float
    p_value: float
    kind: str = "direct"
    combined: object | None = field(default=None, compare=False, repr=False)

    def is_member(self, cutoff: float) -> bool:
        return self.p_value < cutoff

    def decisions(self, cutoffs: Sequence[float]) -> dict[float, str]:
        return {c: "member" if self.is_member(c) else "non-member" for c in cutoffs}


def reference_losses(ensemble: Ensemble, features: np.ndarray, labels) -> np.ndarray:
    """Log losses of every reference model: shape (k,) for one record or (k, n)."""
    probs = ensemble.probabilities(features)
    labels = np.asarray(labels)
    if probs.ndim == 2:
        return loss_from_probability(probs[:, int(labels)])
    return loss_from_probability(np.take_along_axis(probs, labels[None, :, None], axis=2)[..., 0])


def target_loss(model: ModelParams, features: np.ndarray, label: int) -> float:
    return float(loss_from_probability(predict(model, features)[int(label)]))


def direct_attack(target_model: ModelParams, target: Record, ensemble: Ensemble,
                  model_id: str = "target") -> HypothesisResult:
    ensemble.check_excludes(target.id)
    cdf = fit_cdf(LossSample(tuple(reference_losses(ensemble, target.features, target.label)), target.id))
    stat = target_loss(target_model, target.features, target.label)
    return HypothesisResult(target.id, model_id, stat, float(cdf(stat)), "direct")


def query_attack(target_model: ModelParams, query: Record, label: int, ensemble: Ensemble,
                 model_id: str = "target") -> HypothesisResult:
    """The direct test applied to an arbitrary query record scored against ``label``."""
    cdf = fit_cdf(reference_losses(ensemble, query.features, label))
    stat = target_loss(target_model, query.features, label)
    return HypothesisResult(query.id, model_id, stat, float(cdf(stat)), "direct")
