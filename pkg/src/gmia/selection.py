"""Vulnerable-record selection by neighbour counting in the reference models' logit space."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .datasets import Dataset, Record
from .ensemble import Ensemble


@dataclass(frozen=True)
class SelectionParams:
    delta: float
    beta: float
    n_train: int
    n_pool: int
    ratio: str = "density"

    def __post_init__(self):
        if not 0 < self.delta <= 2:
            raise ValueError(f"neighbor threshold must lie in (0, 2], got {self.delta}")
        if self.beta < 0:
            raise ValueError("probability threshold must be non-negative")
        if self.n_train < 1 or self.n_pool < 1:
            raise ValueError("training-set and pool sizes must be positive")
        if self.ratio not in ("density", "inverse"):
            raise ValueError(f"unknown expected-neighbour ratio {self.ratio!r}")


@dataclass(frozen=True)
class VulnerabilityVerdict:
    record_id: str
    neighbor_count: int
    expected_neighbors: float
    selected: bool


def record_feature_vector(ensemble: Ensemble, record: Record | np.ndarray) -> np.ndarray:
    """Concatenated pre-softmax outputs of all reference models (length k * classes)."""
    x = record.features if isinstance(record, Record) else np.asarray(record)
    return ensemble.logits(x).reshape(-1)


def feature_matrix(ensemble: Ensemble, X: np.ndarray) -> np.ndarray:
    """Row i is ``record_feature_vector`` of X[i]."""
    z = ensemble.logits(np.asarray(X, dtype=np.float64))  # (k, n, C)
    return np.transpose(z, (1, 0, 2)).reshape(z.shape[1], -1)


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("feature vectors differ in length")
    return float(cosine_distances(a[None], b[None])[0, 0])


def cosine_distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise 1 - cos between rows; rows with zero norm are at distance 2 from everything."""
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = (A @ B.T) / np.outer(na, nb)
    d = np.clip(1.0 - sim, 0.0, 2.0)
    d[(na == 0)[:, None] | (nb == 0)[None, :]] = 2.0
    return d


def neighbor_counts(candidates: Dataset, reference_pool: Dataset, ensemble: Ensemble,
                    delta: float) -> np.ndarray:
    """Number of pool records (other than the candidate itself, by id) within distance < delta."""
    dist = cosine_distances(feature_matrix(ensemble, candidates.X), feature_matrix(ensemble, reference_pool.X))
    same = np.array([[c == p for p in reference_pool.ids] for c in candidates.ids], dtype=bool)
    return ((dist < delta) & ~same).sum(axis=1)


def count_neighbors(record: Record, reference_pool: Dataset, ensemble: Ensemble, delta: float) -> int:
    f = record_feature_vector(ensemble, record)[None]
    dist = cosine_distances(f, feature_matrix(ensemble, reference_pool.X))[0]
    same = np.array([rid == record.id for rid in reference_pool.ids])
    return int(((dist < delta) & ~same).sum())


def expected_training_neighbors(n_neighbors, n_train: int, n_pool: int, ratio: str = "density"):
    """Neighbours expected in an n_train-record training set given the pool count.

    ``density`` scales the pool count by n_train / n_pool; ``inverse``
    multiplies by n_pool / n_train instead.
    """
    if n_train <= 0 or n_pool <= 0:
        raise ValueError("set sizes must be positive")
    factor = n_train / n_pool if ratio == "density" else n_pool / n_train
    return np.asarray(n_neighbors) * factor


def select_vulnerable(candidates: Dataset, reference_pool: Dataset, ensemble: Ensemble,
                      params: SelectionParams) -> list[VulnerabilityVerdict]:
    counts = neighbor_counts(candidates, reference_pool, ensemble, params.delta)
    expected = expected_training_neighbors(counts, params.n_train, params.n_pool, params.ratio)
    return [VulnerabilityVerdict(rid, int(c), float(e), bool(e < params.beta))
            for rid, c, e in zip(candidates.ids, counts, expected)]


def selected_ids(verdicts: Sequence[VulnerabilityVerdict]) -> list[str]:
    return [v.record_id for v in verdicts if v.selected]


def write_verdicts(path: str | Path, verdicts: Sequence[VulnerabilityVerdict], params: SelectionParams) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["record_id", "neighbor_count", "expected_neighbors", "selected", "delta", "beta"])
        for v in verdicts:
            w.writerow([v.record_id, v.neighbor_count, repr(v.expected_neighbors), int(v.selected),
                        params.delta, params.beta])
