"""Indirect membership inference through enhancing records.

An enhancing record is a query other than the target whose prediction moves
when the target joins the training set. Candidates are generated, thinned by
clustering, scored by how often a target-augmented model raises the target
label's probability on them, optionally optimized, and finally attacked one by
one with the direct test; the per-query p-values are then combined.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import squareform

from .combine import CombinedResult, kost_combine
from .datasets import Record
from .direct import HypothesisResult, fit_cdf, reference_losses
from .ensemble import Ensemble
from .model import ConfigurationError, ModelParams, input_gradients_stacked, loss_from_probability, stacked_predict
from .selection import cosine_distances

GENERATION_MODES = ("uniform_feature_space", "gaussian_around_target")


@dataclass(frozen=True)
class IndirectParams:
    influence_threshold: float = 0.95
    hinge_margin: float = 0.05
    generation_mode: str = "uniform_feature_space"
    noise_scale: float = 1.0
    n_candidates: int = 5000
    n_clusters: int = 50
    max_opt_steps: int = 100
    opt_learning_rate: float = 0.3
    min_enhancing: int = 10

    def __post_init__(self):
        if not 0 < self.influence_threshold <= 1:
            raise ValueError(f"influence threshold must lie in (0, 1], got {self.influence_threshold}")
        if self.hinge_margin <= 0:
            raise ValueError("hinge margin must be positive")
        if self.generation_mode not in GENERATION_MODES:
            raise ValueError(f"unknown generation mode {self.generation_mode!r}")
        if self.generation_mode == "gaussian_around_target" and self.noise_scale <= 0:
            raise ValueError("gaussian generation needs a positive noise scale")
        if self.n_candidates < 1 or self.n_clusters < 1:
            raise ValueError("candidate and cluster budgets must be positive")
        if self.max_opt_steps < 0 or self.opt_learning_rate < 0:
            raise ValueError("optimization budget and step size must be non-negative")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class InfluenceScore:
    """Fraction of paired models (count / k) whose target-augmented copy raises
    the target label's probability on the query."""

    count: int
    k: int
    target_id: str
    query_id: str

    @property
    def value(self) -> float:
        return self.count / self.k


@dataclass(frozen=True, eq=False)
class OptimizationResult:
    record: Record
    influence: InfluenceScore
    hinge: float
    start_hinge: float
    steps: int
    stopped_nonfinite: bool = False


@dataclass(frozen=True, eq=False)
class EnhancingRecord:
    record: Record
    influence: float
    generation_mode: str
    seed: int
    opt_steps: int = 0


# ---------------------------------------------------------------------------
# candidates and clustering


def generate_candidates(params: IndirectParams, target: Record, feature_ranges: tuple[np.ndarray, np.ndarray],
                        seed: int, n: int | None = None) -> list[Record]:
    """Random queries labelled with the target's label.

    Uniform mode samples every feature inside ``feature_ranges``; gaussian mode
    perturbs the target's features with independent N(0, noise_scale^2) noise.
    """
    n = params.n_candidates if n is None else n
    lo, hi = (np.asarray(v, dtype=np.float64) for v in feature_ranges)
    gen = np.random.default_rng(seed)
    if params.generation_mode == "uniform_feature_space":
        X = lo + (hi - lo) * gen.random((n, len(lo)))
    else:
        X = target.features + params.noise_scale * gen.standard_normal((n, len(target.features)))
    return [Record(f"{target.id}~q{i:05d}", X[i], target.label) for i in range(n)]


def query_features(ensemble: Ensemble, queries: Sequence[Record]) -> np.ndarray:
    """Row i concatenates every reference model's prediction vector on query i."""
    X = np.array([q.features for q in queries], dtype=np.float64)
    p = ensemble.probabilities(X)  # (k, n, C)
    return np.transpose(p, (1, 0, 2)).reshape(len(queries), -1)


def cluster_select(candidates: Sequence[Record], ensemble: Ensemble, n_clusters: int) -> list[Record]:
    """Average-linkage clustering on cosine distance between query features,
    returning each cluster's medoid (least mean distance to its cluster mates).

    Representatives are ordered by the position of their cluster's first member.
    """
    n = len(candidates)
    if not 1 <= n_clusters <= n:
        raise ValueError(f"need 1 <= n_clusters <= {n}, got {n_clusters}")
    if n_clusters == n:
        return list(candidates)
    dist = cosine_distances(*(2 * [query_features(ensemble, candidates)]))
    dist = (dist + dist.T) / 2
    np.fill_diagonal(dist, 0.0)
    labels = cut_tree(linkage(squareform(dist, checks=False), method="average"), n_clusters=n_clusters).ravel()
    chosen = []
    for lab in dict.fromkeys(labels):
        members = np.flatnonzero(labels == lab)
        chosen.append(candidates[members[np.argmin(dist[np.ix_(members, members)].mean(axis=1))]])
    return chosen


# ---------------------------------------------------------------------------
# influence and selection


def _check_pair(reference: Ensemble, positive: Ensemble, target: Record) -> None:
    if reference.k != positive.k or positive.kind != "positive" or reference.kind != "reference":
        raise ConfigurationError("influence needs a reference ensemble and its positive counterpart")
    if positive.target_record_id != target.id:
        raise ConfigurationError(f"positive ensemble was built for {positive.target_record_id!r}, not {target.id!r}")
    if any(a.ids != b.ids for a, b in zip(reference.manifests, positive.manifests)):
        raise ConfigurationError("ensembles are not paired model by model")


def _probability_gaps(queries: np.ndarray, label: int, reference: Ensemble, positive: Ensemble) -> np.ndarray:
    """(k, n) differences positive - reference in the probability of ``label``."""
    return (positive.probabilities(queries)[..., label] - reference.probabilities(queries)[..., label])


def influence(target: Record, query: Record, reference: Ensemble, positive: Ensemble) -> InfluenceScore:
    _check_pair(reference, positive, target)
    gaps = _probability_gaps(query.features[None], target.label, reference, positive)[:, 0]
    return InfluenceScore(int((gaps > 0).sum()), reference.k, target.id, query.id)


def influence_scores(target: Record, queries: Sequence[Record], reference: Ensemble,
                     positive: Ensemble) -> list[InfluenceScore]:
    _check_pair(reference, positive, target)
    if not queries:
        return []
    X = np.array([q.features for q in queries], dtype=np.float64)
    counts = (_probability_gaps(X, target.label, reference, positive) > 0).sum(axis=0)
    return [InfluenceScore(int(c), reference.k, target.id, q.id) for c, q in zip(counts, queries)]


def select_enhancing(query: Record, score: InfluenceScore, threshold: float) -> bool:
    if score.query_id != query.id:
        raise ValueError("score belongs to a different query")
    if threshold >= 1:
        warnings.warn("an influence threshold of 1 rejects every query", UserWarning, stacklevel=2)
    return score.value > threshold


# ---------------------------------------------------------------------------
# optimization


def hinge_objective(features: np.ndarray, label: int, reference: Ensemble, positive: Ensemble,
                    margin: float) -> tuple[float, np.ndarray]:
    """Sum over model pairs of max(0, margin - gap) and the per-pair gaps."""
    gaps = _probability_gaps(np.asarray(features, dtype=np.float64)[None], label, reference, positive)[:, 0]
    return float(np.maximum(0.0, margin - gaps).sum()), gaps


def hinge_gradient(features: np.ndarray, label: int, reference: Ensemble, positive: Ensemble,
                   margin: float) -> np.ndarray:
    _, gaps = hinge_objective(features, label, reference, positive, margin)
    active = (margin - gaps > 0).astype(np.float64)
    k = reference.k
    C = reference.spec.n_classes
    g_pos = np.zeros((k, C))
    g_pos[:, label] = -active
    g_ref = np.zeros((k, C))
    g_ref[:, label] = active
    return (input_gradients_stacked(positive.models, features, g_pos)
            + input_gradients_stacked(reference.models, features, g_ref))


def optimize_enhancing(query0: Record, target: Record, reference: Ensemble, positive: Ensemble,
                       params: IndirectParams,
                       feature_ranges: tuple[np.ndarray, np.ndarray] | None = None) -> OptimizationResult:
    """Gradient descent on the hinge relaxation of the influence score.

    Each step moves ``opt_learning_rate`` along the normalized negative
    gradient. Iterates are clamped to ``feature_ranges``. Among iterates whose hinge value
    does not exceed the start's, the one with the highest influence (then the
    lowest hinge) is returned; the start itself always qualifies.
    """
    _check_pair(reference, positive, target)
    x = np.asarray(query0.features, dtype=np.float64).copy()
    if x.shape != (reference.spec.n_features,):
        raise ConfigurationError("query has the wrong number of features")
    lo, hi = (None, None) if feature_ranges is None else feature_ranges
    label = target.label

    def score(features):
        h, gaps = hinge_objective(features, label, reference, positive, params.hinge_margin)
        return h, int((gaps > 0).sum())

    start_h, start_count = score(x)
    best = (start_count, -start_h, x.copy(), 0)
    steps = 0
    nonfinite = False
    for step in range(1, params.max_opt_steps + 1):
        grad = hinge_gradient(x, label, reference, positive, params.hinge_margin)
        if not np.all(np.isfinite(grad)):
            nonfinite = True
            break
        norm = float(np.linalg.norm(grad))
        if norm == 0:
            break
        # fixed-length steps: the hinge gradient all but vanishes where predictions saturate
        x = x - params.opt_learning_rate * grad / norm
        if lo is not None:
            x = np.clip(x, lo, hi)
        steps = step
        h, count = score(x)
        if not np.isfinite(h):
            nonfinite = True
            break
        if h <= start_h and (count, -h) > best[:2]:
            best = (count, -h, x.copy(), step)
    count, neg_h, features, _ = best
    record = query0.with_features(features)
    return OptimizationResult(record, InfluenceScore(count, reference.k, target.id, record.id),
                              -neg_h, start_h, steps, nonfinite)


def find_enhancing(target: Record, reference: Ensemble, positive: Ensemble, params: IndirectParams,
                   feature_ranges: tuple[np.ndarray, np.ndarray], seed: int,
                   cluster: bool = True) -> list[EnhancingRecord]:
    """Generate, cluster, score and (when too few pass) optimize candidate queries."""
    candidates = generate_candidates(params, target, feature_ranges, seed)
    if cluster:
        candidates = cluster_select(candidates, reference, min(params.n_clusters, len(candidates)))
    scores = influence_scores(target, candidates, reference, positive)
    accepted = [EnhancingRecord(q, s.value, params.generation_mode, seed)
                for q, s in zip(candidates, scores) if select_enhancing(q, s, params.influence_threshold)]
    if len(accepted) < params.min_enhancing:
        for q, s in zip(candidates, scores):
            if s.value > params.influence_threshold:
                continue
            res = optimize_enhancing(q, target, reference, positive, params, feature_ranges)
            if select_enhancing(res.record, res.influence, params.influence_threshold):
                accepted.append(EnhancingRecord(res.record, res.influence.value, params.generation_mode,
                                                seed, res.steps))
    return [e for e in accepted if np.linalg.norm(e.record.features - target.features) > 0]


# ---------------------------------------------------------------------------
# combined attack


def estimate_query_correlation(features: np.ndarray) -> np.ndarray:
    """Pearson correlation between rows; a constant row correlates 0 with the others."""
    F = np.asarray(features, dtype=np.float64)
    if F.ndim != 2 or len(F) < 2:
        raise ValueError("need at least 2 query feature vectors")
    centered = F - F.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    unit = centered / safe[:, None]
    corr = np.clip(unit @ unit.T, -1.0, 1.0)
    corr[norms == 0, :] = 0.0
    corr[:, norms == 0] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr


def _check_queries(target: Record, enhancing: Sequence[Record]) -> np.ndarray:
    if not enhancing:
        raise ValueError("indirect attack needs at least one enhancing record")
    X = np.array([q.features for q in enhancing], dtype=np.float64)
    if any(q.id == target.id for q in enhancing) or np.min(np.linalg.norm(X - target.features, axis=1)) == 0:
        raise ValueError("an enhancing record coincides with the target")
    return X


def query_p_values(target_models: Sequence[ModelParams], target: Record, enhancing: Sequence[Record],
                   reference: Ensemble) -> np.ndarray:
    """(n_models, n_queries) direct-test p-values of each query scored against the target's label."""
    X = _check_queries(target, enhancing)
    labels = np.full(len(X), target.label)
    ref = reference_losses(reference, X, labels)  # (k, nq)
    cdfs = [fit_cdf(ref[:, j]) for j in range(len(X))]
    probs = stacked_predict(list(target_models), X)[..., target.label]  # (M, nq)
    losses = loss_from_probability(probs)
    return np.stack([cdfs[j](losses[:, j]) for j in range(len(X))], axis=1)


def indirect_attack_many(target_models: Sequence[ModelParams], target: Record, enhancing: Sequence[Record],
                         reference: Ensemble, model_ids: Sequence[str]) -> list[HypothesisResult]:
    reference.check_excludes(target.id)
    pv = query_p_values(target_models, target, enhancing, reference)
    corr = (estimate_query_correlation(query_features(reference, enhancing)) if len(enhancing) > 1
            else np.ones((1, 1)))
    out = []
    for mid, row in zip(model_ids, pv):
        comb: CombinedResult = kost_combine(row, corr)
        out.append(HypothesisResult(target.id, mid, comb.statistic, comb.p_value, "indirect", comb))
    return out


def indirect_attack(target_model: ModelParams, target: Record, enhancing: Sequence[Record],
                    reference: Ensemble, model_id: str = "target") -> HypothesisResult:
    return indirect_attack_many([target_model], target, enhancing, reference, [model_id])[0]


# ---------------------------------------------------------------------------
# persistence


def write_enhancing(path: str | Path, target: Record, records: Sequence[EnhancingRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        n = len(target.features)
        w.writerow(["query_id", "target_id", "label", "generation_mode", "seed", "influence", "opt_steps"]
                   + [f"x{i}" for i in range(n)])
        for e in records:
            w.writerow([e.record.id, target.id, e.record.label, e.generation_mode, e.seed, repr(e.influence),
                        e.opt_steps] + [repr(float(v)) for v in e.record.features])


def read_enhancing(path: str | Path) -> list[EnhancingRecord]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            xs = sorted((k for k in row if k.startswith("x") and k[1:].isdigit()), key=lambda k: int(k[1:]))
            rec = Record(row["query_id"], np.array([float(row[k]) for k in xs]), int(row["label"]))
            out.append(EnhancingRecord(rec, float(row["influence"]), row["generation_mode"], int(row["seed"]),
                                       int(row["opt_steps"])))
    return out
