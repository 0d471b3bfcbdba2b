"""End-to-end evaluation: the 100-target-model protocol, metric aggregation,
parameter sweeps and the two-dimensional toy demonstration."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._seeding import hash64
from .datasets import (
    TOY_CONTROL_ID, TOY_OUTLIER_ID, Dataset, SplitPlan, generate_toy, make_split_plan, partition,
    standardize_with,
)
from .direct import fit_cdf, reference_losses
from .ensemble import Ensemble, build_positive_reference_models, build_reference_models, train_stack
from .indirect import IndirectParams, find_enhancing, indirect_attack_many
from .model import (
    ConfigurationError, ModelParams, ModelSpec, TrainingConfig, accuracy, loss_from_probability,
    stacked_predict,
)
from .selection import SelectionParams, VulnerabilityVerdict, select_vulnerable

ATTACK_KINDS = ("direct", "indirect")


@dataclass(frozen=True)
class ProtocolConfig:
    n_target: int = 200
    n_repeats: int = 50
    cutoffs: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 1e-1)
    attack_kinds: tuple[str, ...] = ("direct",)
    delta: float = 0.1
    beta: float = 0.1
    neighbor_ratio: str = "density"
    layer_sizes: tuple[int, ...] = (10, 2)
    hidden_activation: str = "tanh"
    training: TrainingConfig = TrainingConfig(epochs=300, batch_size=10, learning_rate=0.05)
    n_references: int = 30
    reference_sample_size: int = 100
    indirect: IndirectParams = IndirectParams(n_candidates=500, n_clusters=50)
    update: TrainingConfig = TrainingConfig(epochs=20, batch_size=10, learning_rate=0.05)
    positive_batches: int = 5
    cluster_candidates: bool = True
    standardize: bool = True
    attack_records: tuple[str, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        c = tuple(float(v) for v in self.cutoffs)
        if not c or any(not 0 < v < 1 for v in c) or any(a >= b for a, b in zip(c, c[1:])):
            raise ConfigurationError("cutoffs must be strictly increasing inside (0, 1)")
        object.__setattr__(self, "cutoffs", c)
        bad = set(self.attack_kinds) - set(ATTACK_KINDS)
        if bad or not self.attack_kinds:
            raise ConfigurationError(f"unknown attack kinds {sorted(bad)}")
        if self.n_repeats < 1 or self.n_target < 2:
            raise ConfigurationError("need at least one repeat and two target records")
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))
        object.__setattr__(self, "attack_kinds", tuple(self.attack_kinds))
        if self.attack_records is not None:
            object.__setattr__(self, "attack_records", tuple(self.attack_records))

    @property
    def spec(self) -> ModelSpec:
        return ModelSpec(self.layer_sizes, self.hidden_activation)

    def seed_for(self, stage: str) -> int:
        return hash64(self.seed, stage)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k in ("training", "update", "indirect"):
            d[k] = d[k].to_dict()
        for k in ("cutoffs", "attack_kinds", "layer_sizes"):
            d[k] = list(d[k])
        if d["attack_records"] is not None:
            d["attack_records"] = list(d["attack_records"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ProtocolConfig":
        d = dict(d)
        defaults = cls()
        # nested sections may be partial; missing fields keep their defaults
        for k in ("training", "update", "indirect"):
            if k in d:
                d[k] = replace(getattr(defaults, k), **d[k])
        for k in ("cutoffs", "attack_kinds", "layer_sizes"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass(frozen=True)
class ReportRow:
    record_id: str
    model_id: str
    kind: str
    p_value: float
    member: bool

    def fires(self, cutoff: float) -> bool:
        return self.p_value < cutoff


@dataclass(frozen=True)
class CutoffMetrics:
    cutoff: float
    tp: int
    fp: int
    precision: float | None
    recall: float

    def as_dict(self) -> dict:
        return {"cutoff": self.cutoff, "tp": self.tp, "fp": self.fp,
                "precision": "-" if self.precision is None else self.precision, "recall": self.recall}


@dataclass(frozen=True)
class AccuracySummary:
    train_mean: float
    train_sd: float
    test_mean: float
    test_sd: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class AttackReport:
    rows: tuple[ReportRow, ...]
    cutoffs: tuple[float, ...]
    selected: tuple[str, ...] = ()
    verdicts: tuple[VulnerabilityVerdict, ...] = ()
    accuracy: AccuracySummary | None = None
    flags: tuple[str, ...] = ()
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rows", tuple(sorted(self.rows, key=lambda r: (r.record_id, r.model_id, r.kind))))

    @property
    def empty(self) -> bool:
        return not self.rows

    def kinds(self) -> list[str]:
        return sorted({r.kind for r in self.rows})

    def metrics(self, kind: str = "direct", cutoffs: Sequence[float] | None = None) -> list[CutoffMetrics]:
        return aggregate(self.rows, self.cutoffs if cutoffs is None else cutoffs, kind)

    def always_infer_precision(self, kind: str = "direct") -> float | None:
        rows = [r for r in self.rows if r.kind == kind]
        return sum(r.member for r in rows) / len(rows) if rows else None

    def summary(self) -> dict:
        return {
            "config": self.config,
            "selected": list(self.selected),
            "n_selected": len(self.selected),
            "accuracy": None if self.accuracy is None else self.accuracy.as_dict(),
            "flags": list(self.flags),
            "attacks": {
                kind: {
                    "rows": sum(r.kind == kind for r in self.rows),
                    "member_rows": sum(r.kind == kind and r.member for r in self.rows),
                    "always_infer_precision": self.always_infer_precision(kind),
                    "cutoffs": [m.as_dict() for m in self.metrics(kind)],
                }
                for kind in self.kinds()
            },
        }


def aggregate(rows: Sequence[ReportRow], cutoffs: Sequence[float], kind: str = "direct") -> list[CutoffMetrics]:
    """TP/FP/precision/recall per cutoff; recall is over the member rows attacked."""
    rows = [r for r in rows if r.kind == kind]
    p = np.array([r.p_value for r in rows])
    member = np.array([r.member for r in rows], dtype=bool)
    n_member = int(member.sum())
    out = []
    for c in cutoffs:
        fire = p < c if len(p) else np.zeros(0, dtype=bool)
        tp = int((fire & member).sum())
        fp = int((fire & ~member).sum())
        out.append(CutoffMetrics(float(c), tp, fp, tp / (tp + fp) if tp + fp else None,
                                 tp / n_member if n_member else 0.0))
    return out


def precision_recall_curve(report: AttackReport, cutoffs: Sequence[float], kind: str = "direct") -> list[CutoffMetrics]:
    if report.empty:
        raise ValueError("the report has no rows")
    return aggregate(report.rows, sorted(cutoffs), kind)


# ---------------------------------------------------------------------------
# protocol


@dataclass(frozen=True, eq=False)
class ProtocolState:
    """Everything the attacks need that does not depend on attack settings."""

    target_pool: Dataset
    reference_pool: Dataset
    plan: SplitPlan
    target_models: tuple[ModelParams, ...]
    model_ids: tuple[str, ...]
    ensemble: Ensemble
    accuracy: AccuracySummary
    feature_reference: Dataset | None = None

    def encode(self, data: Dataset) -> Dataset:
        """Apply the protocol's feature standardization to outside records."""
        return data if self.feature_reference is None else standardize_with(data, self.feature_reference)


def make_pools(dataset: Dataset, config: ProtocolConfig) -> tuple[Dataset, Dataset, Dataset | None]:
    """(target pool, reference pool, feature reference) after the optional standardization."""
    target_pool, reference_pool = partition(dataset, config.n_target, config.seed_for("partition"))
    raw_reference = reference_pool
    if config.standardize:
        target_pool = standardize_with(target_pool, raw_reference)
        reference_pool = standardize_with(reference_pool, raw_reference)
    if set(target_pool.ids) & set(reference_pool.ids):
        raise ConfigurationError("target and reference pools overlap")
    return target_pool, reference_pool, raw_reference if config.standardize else None


def train_reference_ensemble(reference_pool: Dataset, config: ProtocolConfig, jobs: int = 1) -> Ensemble:
    return build_reference_models(reference_pool, config.n_references, config.reference_sample_size, config.spec,
                                  config.training, config.seed_for("references"), jobs=jobs)


def train_target_models(target_pool: Dataset, config: ProtocolConfig,
                        jobs: int = 1) -> tuple[SplitPlan, tuple[ModelParams, ...], tuple[str, ...]]:
    plan = make_split_plan(target_pool, config.n_repeats, config.seed_for("split"))
    sets = [target_pool.take(sorted(m)) for m in plan.membership]
    configs = [config.training.replace(seed=hash64(config.seed_for("targets"), j)) for j in range(plan.n_models)]
    models = tuple(train_stack(sets, config.spec, configs, jobs=jobs))
    return plan, models, tuple(f"m{j:03d}" for j in range(plan.n_models))


def accuracy_summary(target_pool: Dataset, plan: SplitPlan, models: Sequence[ModelParams]) -> AccuracySummary:
    """Train accuracy on each model's half, test accuracy on the other half."""
    train_acc, test_acc = [], []
    for m, mem in zip(models, plan.membership):
        train_acc.append(accuracy(m, target_pool.take(sorted(mem))))
        test_acc.append(accuracy(m, target_pool.take(sorted(set(target_pool.ids) - mem))))
    return AccuracySummary(float(np.mean(train_acc)), float(np.std(train_acc)),
                           float(np.mean(test_acc)), float(np.std(test_acc)))


def prepare(dataset: Dataset, config: ProtocolConfig, jobs: int = 1) -> ProtocolState:
    """Partition, train the target models of the split plan, and train the reference ensemble."""
    target_pool, reference_pool, feature_reference = make_pools(dataset, config)
    plan, models, model_ids = train_target_models(target_pool, config, jobs)
    ensemble = train_reference_ensemble(reference_pool, config, jobs)
    return ProtocolState(target_pool, reference_pool, plan, models, model_ids, ensemble,
                         accuracy_summary(target_pool, plan, models), feature_reference)


def holdout_p_values(state: ProtocolState, holdout: Dataset) -> np.ndarray:
    """Direct-test p-values of records outside every training and reference set."""
    overlap = set(holdout.ids) & (set(state.target_pool.ids) | set(state.reference_pool.ids))
    if overlap:
        raise ConfigurationError(f"holdout shares {len(overlap)} ids with the protocol pools")
    return direct_p_values(state.target_models, state.ensemble, state.encode(holdout))


def selection_params(state: ProtocolState, config: ProtocolConfig) -> SelectionParams:
    n_train = len(next(iter(state.plan.membership)))
    return SelectionParams(config.delta, config.beta, n_train, len(state.reference_pool), config.neighbor_ratio)


def direct_scores(models: Sequence[ModelParams], ensemble: Ensemble, data: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """(p-values, target losses), both (n_records, n_models), of the direct test."""
    for rid in data.ids:
        ensemble.check_excludes(rid)
    ref = reference_losses(ensemble, data.X, data.y)  # (k, n)
    probs = stacked_predict(list(models), data.X)  # (M, n, C)
    losses = loss_from_probability(np.take_along_axis(probs, data.y[None, :, None], axis=2)[..., 0])
    p = np.stack([fit_cdf(ref[:, i])(losses[:, i]) for i in range(len(data))])
    return p, losses.T


def direct_p_values(models: Sequence[ModelParams], ensemble: Ensemble, data: Dataset) -> np.ndarray:
    """(n_records, n_models) direct-test p-values of every record against every model."""
    return direct_scores(models, ensemble, data)[0]


def attack(state: ProtocolState, config: ProtocolConfig) -> AttackReport:
    verdicts = tuple(select_vulnerable(state.target_pool, state.reference_pool, state.ensemble,
                                       selection_params(state, config)))
    if config.attack_records is not None:
        chosen = tuple(r for r in config.attack_records if r in set(state.target_pool.ids))
    else:
        chosen = tuple(v.record_id for v in verdicts if v.selected)
    flags = []
    if not chosen:
        flags.append("no vulnerable records selected")
    rows = []
    membership = state.plan.matrix()
    pos = {rid: i for i, rid in enumerate(state.plan.record_ids)}
    if chosen and "direct" in config.attack_kinds:
        pv = direct_p_values(state.target_models, state.ensemble, state.target_pool.take(chosen))
        for rid, row in zip(chosen, pv):
            for j, mid in enumerate(state.model_ids):
                rows.append(ReportRow(rid, mid, "direct", float(row[j]), bool(membership[pos[rid], j])))
    if chosen and "indirect" in config.attack_kinds:
        lo, hi = state.reference_pool.feature_ranges()
        for rid in chosen:
            target = state.target_pool.get(rid)
            positive = build_positive_reference_models(state.ensemble, target, config.update,
                                                       config.positive_batches)
            enhancing = find_enhancing(target, state.ensemble, positive, config.indirect, (lo, hi),
                                       hash64(config.seed_for("enhancing"), rid), config.cluster_candidates)
            if not enhancing:
                flags.append(f"no enhancing records for {rid}")
                continue
            results = indirect_attack_many(state.target_models, target, [e.record for e in enhancing],
                                           state.ensemble, state.model_ids)
            for j, res in enumerate(results):
                rows.append(ReportRow(rid, res.model_id, "indirect", res.p_value, bool(membership[pos[rid], j])))
    return AttackReport(tuple(rows), config.cutoffs, chosen, verdicts, state.accuracy, tuple(flags),
                        config.to_dict())


def run_protocol(dataset: Dataset, config: ProtocolConfig, jobs: int = 1) -> AttackReport:
    return attack(prepare(dataset, config, jobs=jobs), config)


# ---------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("epochs", "l2_lambda", "selection_thresholds")


@dataclass(frozen=True, eq=False)
class SweepRow:
    value: object
    report: AttackReport

    @property
    def n_selected(self) -> int:
        return len(self.report.selected)

    def as_dict(self, kind: str = "direct") -> dict:
        return {"value": self.value, "n_selected": self.n_selected,
                "accuracy": self.report.accuracy.as_dict() if self.report.accuracy else None,
                "cutoffs": [m.as_dict() for m in self.report.metrics(kind)]}


def sweep(dataset: Dataset, config: ProtocolConfig, axis: str, values: Sequence, jobs: int = 1) -> list[SweepRow]:
    """One protocol run per value. Selection thresholds are (delta, beta) pairs
    and reuse a single set of trained models."""
    if not values:
        raise ValueError("sweep needs at least one value")
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}")
    out = []
    if axis == "selection_thresholds":
        state = prepare(dataset, config, jobs=jobs)
        for delta, beta in values:
            out.append(SweepRow((delta, beta), attack(state, replace(config, delta=delta, beta=beta))))
        return out
    for v in values:
        changes = {"epochs": int(v)} if axis == "epochs" else {"l2": float(v)}
        cfg = replace(config, training=config.training.replace(**changes))
        out.append(SweepRow(v, run_protocol(dataset, cfg, jobs=jobs)))
    return out


# ---------------------------------------------------------------------------
# toy demonstration

TOY_SECOND_QUERY = (-3.0, 3.0)


@dataclass(frozen=True, eq=False)
class InOutDistribution:
    record_id: str
    in_outputs: np.ndarray
    out_outputs: np.ndarray
    bin_edges: np.ndarray
    in_density: np.ndarray
    out_density: np.ndarray

    @property
    def auc(self) -> float:
        return auc(self.in_outputs, self.out_outputs)

    @property
    def overlap(self) -> float:
        """Shared area under the two histogram densities (1 = identical)."""
        width = np.diff(self.bin_edges)
        return float((np.minimum(self.in_density, self.out_density) * width).sum())


@dataclass(frozen=True, eq=False)
class ToyDemoResult:
    outlier: InOutDistribution
    control: InOutDistribution
    grid: np.ndarray
    log_ratio: np.ndarray
    second_query: tuple[float, float]
    train_accuracy: float


def auc(positive: np.ndarray, negative: np.ndarray) -> float:
    """P(positive > negative) + P(tie)/2 over all pairs."""
    a = np.asarray(positive, dtype=np.float64)[:, None]
    b = np.asarray(negative, dtype=np.float64)[None, :]
    return float(((a > b) + 0.5 * (a == b)).mean())


def _kde(samples: np.ndarray, points: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Product-Gaussian kernel density with Scott's bandwidth per dimension."""
    n, d = samples.shape
    bw = np.maximum(samples.std(axis=0, ddof=1) * n ** (-1.0 / (d + 4)), floor)
    z = (points[:, None, :] - samples[None]) / bw
    return np.exp(-0.5 * (z**2).sum(axis=2)).mean(axis=1) / np.prod(bw * np.sqrt(2 * np.pi))


def _in_out_sets(data: Dataset, record_index: int, n_models: int, seed: int) -> tuple[list[Dataset], list[Dataset]]:
    """Equal-sized training sets: half of the other records, with the record
    swapped in for one of them in the in-sets."""
    others = np.setdiff1d(np.arange(len(data)), [record_index])
    size = len(others) // 2
    ins, outs = [], []
    for j in range(n_models):
        g = np.random.default_rng(hash64(seed, data.ids[record_index], j))
        pick = g.permutation(others)
        outs.append(data.subset(np.sort(pick[:size])))
        ins.append(data.subset(np.sort(np.append(pick[: size - 1], record_index))))
    return ins, outs


def toy_demonstration(seed: int = 0, n_models: int = 50,
                      training: TrainingConfig = TrainingConfig(epochs=100, batch_size=32, learning_rate=0.1),
                      hidden_units: int = 8, bins: int = 20, grid_size: int = 41) -> ToyDemoResult:
    data = generate_toy(seed)
    spec = ModelSpec((2, hidden_units, 2))
    dists = {}
    outlier_models, outlier_sets = None, None
    for rid in (TOY_OUTLIER_ID, TOY_CONTROL_ID):
        i = data.index_of(rid)
        ins, outs = _in_out_sets(data, i, n_models, seed)
        configs = [training.replace(seed=hash64(seed, rid, "model", j)) for j in range(2 * n_models)]
        models = train_stack(ins + outs, spec, configs)
        label = int(data.y[i])
        out = stacked_predict(models, data.X[i])[:, 0, label]
        edges = np.linspace(0.0, 1.0, bins + 1)
        dists[rid] = InOutDistribution(rid, out[:n_models], out[n_models:], edges,
                                       np.histogram(out[:n_models], edges, density=True)[0],
                                       np.histogram(out[n_models:], edges, density=True)[0])
        if rid == TOY_OUTLIER_ID:
            outlier_models, outlier_sets = models, ins
    i = data.index_of(TOY_OUTLIER_ID)
    label = int(data.y[i])
    queries = np.array([data.X[i], TOY_SECOND_QUERY])
    both = stacked_predict(outlier_models, queries)[..., label]  # (2n, 2)
    axis = np.linspace(0.0, 1.0, grid_size)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    tiny = np.finfo(np.float64).tiny
    ratio = np.log(np.maximum(_kde(both[:n_models], grid), tiny)) - np.log(np.maximum(_kde(both[n_models:], grid), tiny))
    train_acc = float(np.mean([accuracy(m, s) for m, s in zip(outlier_models, outlier_sets)]))
    return ToyDemoResult(dists[TOY_OUTLIER_ID], dists[TOY_CONTROL_ID], grid, ratio.reshape(grid_size, grid_size),
                         TOY_SECOND_QUERY, train_acc)


# ---------------------------------------------------------------------------
# output files


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_report(report: AttackReport, directory: str | Path) -> dict[str, Path]:
    """report.csv (detail rows), summary.json (aggregates) and curve-<kind>.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"report": directory / "report.csv", "summary": directory / "summary.json"}
    with paths["report"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "model_id", "kind", "p_value", "member"] + [f"p<{c:g}" for c in report.cutoffs])
        for r in report.rows:
            w.writerow([r.record_id, r.model_id, r.kind, repr(r.p_value), int(r.member)]
                       + [int(r.fires(c)) for c in report.cutoffs])
    _dump_json(paths["summary"], report.summary())
    for kind in report.kinds():
        p = directory / f"curve-{kind}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cutoff", "precision", "recall", "tp", "fp"])
            for m in report.metrics(kind):
                w.writerow([repr(m.cutoff), "-" if m.precision is None else repr(m.precision), repr(m.recall),
                            m.tp, m.fp])
        paths[f"curve-{kind}"] = p
    return paths


def read_report_rows(path: str | Path) -> list[ReportRow]:
    with Path(path).open(newline="") as fh:
        return [ReportRow(r["record_id"], r["model_id"], r["kind"], float(r["p_value"]), r["member"] == "1")
                for r in csv.DictReader(fh)]


def write_sweep(rows: Sequence[SweepRow], path: str | Path, axis: str) -> None:
    _dump_json(Path(path), {"axis": axis, "rows": [r.as_dict() for r in rows]})


def write_toy(result: ToyDemoResult, directory: str | Path) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"histograms": directory / "toy-histograms.csv", "ratio": directory / "toy-likelihood-ratio.csv",
             "summary": directory / "toy-summary.json"}
    with paths["histograms"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["record_id", "bin_lo", "bin_hi", "in_density", "out_density"])
        for d in (result.outlier, result.control):
            for lo, hi, a, b in zip(d.bin_edges[:-1], d.bin_edges[1:], d.in_density, d.out_density):
                w.writerow([d.record_id, repr(float(lo)), repr(float(hi)), repr(float(a)), repr(float(b))])
    with paths["ratio"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["output_on_record", "output_on_second_query", "log_likelihood_ratio"])
        for (a, b), v in zip(result.grid, result.log_ratio.ravel()):
            w.writerow([repr(float(a)), repr(float(b)), repr(float(v))])
    _dump_json(paths["summary"], {
        "outlier": {"record_id": result.outlier.record_id, "auc": result.outlier.auc, "overlap": result.outlier.overlap},
        "control": {"record_id": result.control.record_id, "auc": result.control.auc, "overlap": result.control.overlap},
        "second_query": list(result.second_query),
        "train_accuracy": result.train_accuracy,
    })
    return paths
