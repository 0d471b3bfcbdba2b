"""Tabular datasets, encodings, split plans and bootstrap samples."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from ._seeding import hash64

VARIANCE_FLOOR = 1e-8


class DataError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Record:
    id: str
    features: np.ndarray
    label: int

    def with_features(self, features: np.ndarray, id: str | None = None) -> "Record":
        return Record(id if id is not None else self.id, np.asarray(features, dtype=np.float64), self.label)


# ---------------------------------------------------------------------------
# schema and encoding


@dataclass(frozen=True)
class Column:
    name: str
    kind: str  # "numeric" | "categorical"


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    label: str
    id_column: str | None = None

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        try:
            cols = tuple(Column(c["name"], c["kind"]) for c in d["columns"])
            label = d["label"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"malformed schema: {exc}") from exc
        for c in cols:
            if c.kind not in ("numeric", "categorical"):
                raise DataError(f"column {c.name!r}: unknown kind {c.kind!r}")
        return cls(cols, label, d.get("id"))

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise DataError(f"schema {path} is not valid JSON: {exc}") from exc

    def to_dict(self) -> dict:
        d = {"columns": [{"name": c.name, "kind": c.kind} for c in self.columns], "label": self.label}
        if self.id_column:
            d["id"] = self.id_column
        return d

    @classmethod
    def numeric(cls, n: int, label: str = "label") -> "Schema":
        return cls(tuple(Column(f"x{i}", "numeric") for i in range(n)), label)


@dataclass
class Encoder:
    """Standardization statistics, categorical levels and the label mapping."""

    schema: Schema
    means: dict[str, float] = field(default_factory=dict)
    stds: dict[str, float] = field(default_factory=dict)
    levels: dict[str, list[str]] = field(default_factory=dict)
    label_levels: list[str] = field(default_factory=list)

    def fit(self, rows: Sequence[dict]) -> "Encoder":
        for col in self.schema.columns:
            values = [row[col.name] for row in rows]
            if col.kind == "numeric":
                arr = np.array([float(v) for v in values])
                self.means[col.name] = float(arr.mean())
                self.stds[col.name] = float(np.sqrt(max(arr.var(), VARIANCE_FLOOR)))
            else:
                self.levels[col.name] = sorted(set(values))
        self.label_levels = _sorted_labels({row[self.schema.label] for row in rows})
        return self

    def feature_names(self) -> list[str]:
        names = []
        for col in self.schema.columns:
            if col.kind == "numeric":
                names.append(col.name)
            else:
                names.extend(f"{col.name}={lvl}" for lvl in self.levels[col.name])
        return names

    def feature_kinds(self) -> list[str]:
        kinds = []
        for col in self.schema.columns:
            kinds.extend(["numeric"] if col.kind == "numeric" else ["onehot"] * len(self.levels[col.name]))
        return kinds

    def transform(self, rows: Sequence[dict]) -> tuple[np.ndarray, np.ndarray]:
        # unseen levels extend the encoding rather than failing
        for col in self.schema.columns:
            if col.kind == "categorical":
                known = self.levels[col.name]
                for row in rows:
                    if row[col.name] not in known:
                        known.append(row[col.name])
        for row in rows:
            if row[self.schema.label] not in self.label_levels:
                self.label_levels.append(row[self.schema.label])
        blocks = []
        for col in self.schema.columns:
            if col.kind == "numeric":
                arr = np.array([float(row[col.name]) for row in rows])
                blocks.append(((arr - self.means[col.name]) / self.stds[col.name])[:, None])
            else:
                lv = {v: i for i, v in enumerate(self.levels[col.name])}
                block = np.zeros((len(rows), len(lv)))
                block[np.arange(len(rows)), [lv[row[col.name]] for row in rows]] = 1.0
                blocks.append(block)
        x = np.hstack(blocks) if blocks else np.zeros((len(rows), 0))
        lab = {v: i for i, v in enumerate(self.label_levels)}
        y = np.array([lab[row[self.schema.label]] for row in rows], dtype=np.int64)
        return x, y

    def to_dict(self) -> dict:
        return {"schema": self.schema.to_dict(), "means": self.means, "stds": self.stds,
                "levels": self.levels, "label_levels": self.label_levels}

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder":
        return cls(Schema.from_dict(d["schema"]), dict(d["means"]), dict(d["stds"]),
                   {k: list(v) for k, v in d["levels"].items()}, list(d["label_levels"]))


def _sorted_labels(values):
    try:
        return sorted(values, key=float)
    except ValueError:
        return sorted(values)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True, eq=False)
class Dataset:
    ids: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    class_count: int
    name: str = "dataset"
    feature_kinds: tuple[str, ...] = ()
    encoder: Encoder | None = None

    def __post_init__(self):
        x = np.array(self.X, dtype=np.float64)
        y = np.array(self.y, dtype=np.int64)
        if x.ndim != 2 or y.shape != (x.shape[0],) or len(self.ids) != x.shape[0]:
            raise DataError("ids, X and y must describe the same records")
        if not np.all(np.isfinite(x)):
            raise DataError("feature matrix contains non-finite values")
        if len(y) and (y.min() < 0 or y.max() >= self.class_count):
            raise DataError("labels must be below class_count")
        x.flags.writeable = False
        y.flags.writeable = False
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        if not self.feature_kinds:
            object.__setattr__(self, "feature_kinds", ("numeric",) * x.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[Record]:
        return (self.record(i) for i in range(len(self)))

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def record(self, i: int) -> Record:
        return Record(self.ids[i], self.X[i], int(self.y[i]))

    def index_of(self, record_id: str) -> int:
        try:
            return self._index[record_id]
        except KeyError:
            raise KeyError(f"unknown record id {record_id!r}") from None

    def get(self, record_id: str) -> Record:
        return self.record(self.index_of(record_id))

    @property
    def _index(self) -> dict[str, int]:
        idx = self.__dict__.get("_idx")
        if idx is None:
            idx = {rid: i for i, rid in enumerate(self.ids)}
            object.__setattr__(self, "_idx", idx)
        return idx

    def subset(self, indices, name: str | None = None) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(tuple(self.ids[i] for i in indices), self.X[indices], self.y[indices],
                       self.class_count, name or self.name, self.feature_kinds, self.encoder)

    def take(self, ids: Sequence[str], name: str | None = None) -> "Dataset":
        return self.subset([self.index_of(i) for i in ids], name)

    def with_features(self, X: np.ndarray) -> "Dataset":
        return Dataset(self.ids, X, self.y, self.class_count, self.name, self.feature_kinds, self.encoder)

    def feature_ranges(self) -> tuple[np.ndarray, np.ndarray]:
        return self.X.min(axis=0), self.X.max(axis=0)


def from_records(records: Sequence[Record], class_count: int, name: str = "records") -> Dataset:
    return Dataset(tuple(r.id for r in records), np.array([r.features for r in records], dtype=np.float64),
                   np.array([r.label for r in records]), class_count, name)


def read_rows(path: str | Path, schema: Schema) -> list[dict]:
    path = Path(path)
    needed = [c.name for c in schema.columns] + [schema.label]
    if schema.id_column:
        needed.append(schema.id_column)
    rows = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [n for n in needed if n not in header]
        if missing:
            raise DataError(f"{path}: columns {missing} declared in schema but absent from header")
        for lineno, values in enumerate(reader, start=2):
            if not values:
                continue
            if len(values) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(values)}")
            row = dict(zip(header, (v.strip() for v in values)))
            for col in schema.columns:
                if col.kind == "numeric":
                    try:
                        v = float(row[col.name])
                    except ValueError:
                        raise DataError(f"{path}:{lineno}: column {col.name!r} is not numeric") from None
                    if not np.isfinite(v):
                        raise DataError(f"{path}:{lineno}: column {col.name!r} is not finite")
            row["__line__"] = lineno
            rows.append(row)
    return rows


def load_csv(path: str | Path, schema: Schema, encoder: Encoder | None = None,
             fit_rows: Sequence[int] | None = None, name: str | None = None) -> Dataset:
    """Load a CSV and encode it.

    Numeric columns are standardized with statistics from ``fit_rows``
    (default: every row of the file), categorical columns become one-hot
    blocks and labels map to contiguous class indices. A pre-built ``encoder``
    replays a stored encoding instead of fitting one.
    """
    rows = read_rows(path, schema)
    if not rows:
        raise DataError(f"{path}: no data rows")
    if encoder is None:
        fit_on = rows if fit_rows is None else [rows[i] for i in fit_rows]
        encoder = Encoder(schema).fit(fit_on)
    x, y = encoder.transform(rows)
    if schema.id_column:
        ids = tuple(row[schema.id_column] for row in rows)
        if len(set(ids)) != len(ids):
            raise DataError(f"{path}: duplicate record ids")
    else:
        ids = tuple(f"row{row['__line__'] - 1:05d}" for row in rows)
    return Dataset(ids, x, y, max(len(encoder.label_levels), 2), name or Path(path).stem,
                   tuple(encoder.feature_kinds()), encoder)


def write_csv(dataset: Dataset, path: str | Path) -> Schema:
    """Write features, label and id; returns the matching all-numeric schema."""
    names = [f"x{i}" for i in range(dataset.n_features)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", *names, "label"])
        for i in range(len(dataset)):
            w.writerow([dataset.ids[i], *(repr(float(v)) for v in dataset.X[i]), int(dataset.y[i])])
    return Schema(tuple(Column(n, "numeric") for n in names), "label", "id")


def standardize_with(dataset: Dataset, reference: Dataset) -> Dataset:
    """Re-standardize numeric columns of ``dataset`` with statistics of ``reference``."""
    numeric = np.array([k == "numeric" for k in dataset.feature_kinds])
    x = dataset.X.copy()
    if numeric.any():
        mean = reference.X[:, numeric].mean(axis=0)
        std = np.sqrt(np.maximum(reference.X[:, numeric].var(axis=0), VARIANCE_FLOOR))
        x[:, numeric] = (x[:, numeric] - mean) / std
    return dataset.with_features(x)


def partition(dataset: Dataset, n_target: int, seed: int, stratify: bool = True) -> tuple[Dataset, Dataset]:
    """Split the record universe once into (target pool, adversary reference pool).

    With ``stratify`` the target pool keeps the universe's class proportions
    (largest-remainder rounding), so the two pools differ in composition only
    by chance within each class.
    """
    if not 0 < n_target < len(dataset):
        raise DataError("n_target must leave both pools non-empty")
    gen = np.random.default_rng(hash64(seed, "partition"))
    if stratify:
        classes, counts = np.unique(dataset.y, return_counts=True)
        quota = counts * n_target / len(dataset)
        take = np.floor(quota).astype(int)
        short = n_target - take.sum()
        take[np.argsort(-(quota - take), kind="stable")[:short]] += 1
        chosen = [gen.permutation(np.flatnonzero(dataset.y == c))[:t] for c, t in zip(classes, take)]
        target = np.sort(np.concatenate(chosen))
    else:
        target = np.sort(gen.permutation(len(dataset))[:n_target])
    pool = np.setdiff1d(np.arange(len(dataset)), target)
    return dataset.subset(target, f"{dataset.name}-target"), dataset.subset(pool, f"{dataset.name}-reference")


# ---------------------------------------------------------------------------
# generators


TOY_SIZE = 1181
TOY_OUTLIER_ID = "toy-outlier"
TOY_CONTROL_ID = "toy-control"
TOY_OUTLIER_POINT = (-4.0, 4.0)


def generate_toy(seed: int = 0) -> Dataset:
    """Two overlapping 2-D Gaussian classes, a sparse uniform fringe (about 2%),
    one planted outlier far out on the class boundary and one control record at
    the centre of the positive class."""
    gen = np.random.default_rng(hash64(seed, "toy"))
    n_fringe = 23
    n_core = TOY_SIZE - n_fringe - 2
    n0 = n_core // 2
    n1 = n_core - n0
    c0 = gen.normal([-1.0, -1.0], 0.9, size=(n0, 2))
    c1 = gen.normal([1.0, 1.0], 0.9, size=(n1, 2))
    fringe = gen.uniform(-3.5, 3.5, size=(n_fringe, 2))
    fringe_y = (fringe.sum(axis=1) + gen.normal(0, 1.0, n_fringe) > 0).astype(int)
    x = np.vstack([[TOY_OUTLIER_POINT], [[1.0, 1.0]], c0, c1, fringe])
    y = np.concatenate([[1, 1], np.zeros(n0, int), np.ones(n1, int), fringe_y])
    ids = [TOY_OUTLIER_ID, TOY_CONTROL_ID] + [f"toy{i:04d}" for i in range(TOY_SIZE - 2)]
    return Dataset(tuple(ids), x, y, 2, "toy")


CANCER_SIZE = 699
CANCER_FEATURES = 10
ATYPICAL_RATE = 0.01
MALIGNANT_SEVERITY = (6.5, 1.6)
BENIGN_SEVERITY = (1.6, 0.7)
MALIGNANT_SPREAD = 2.2
BENIGN_SPREAD = 0.8
ATYPICAL_HIGH = 2


def make_cancer_like(seed: int = 0, n: int = CANCER_SIZE, id_prefix: str = "c") -> Dataset:
    """Cancer-style tabular data: 10 integer-valued features in 1..10 and a
    binary benign(0)/malignant(1) label, about two thirds benign.

    A latent severity drives all features of a record; one rarely-raised
    feature (column 9) mostly sits at 1. A handful of atypical records carry a
    label that their features contradict, and show an uncommon feature
    pattern, so their influence on a trained model is not shared by others.
    """
    gen = np.random.default_rng(hash64(seed, "cancer"))
    malignant = gen.random(n) < 0.345
    severity = np.where(malignant, gen.normal(*MALIGNANT_SEVERITY, n), gen.normal(*BENIGN_SEVERITY, n))
    spread = np.where(malignant, MALIGNANT_SPREAD, BENIGN_SPREAD)
    raw = severity[:, None] + gen.normal(0.0, 1.0, (n, CANCER_FEATURES)) * spread[:, None]
    rare = np.where(malignant & (gen.random(n) < 0.4), gen.integers(2, 11, n), 1)
    raw[:, -1] = rare
    x = np.clip(np.rint(raw), 1, 10)
    y = malignant.astype(int)
    n_atypical = max(1, round(n * ATYPICAL_RATE))
    atypical = gen.choice(np.flatnonzero(~malignant), size=n_atypical, replace=False)
    for a in atypical:
        cols = gen.choice(CANCER_FEATURES - 1, size=ATYPICAL_HIGH, replace=False)
        x[a] = np.clip(np.rint(gen.normal(1.5, 0.6, CANCER_FEATURES)), 1, 3)
        x[a, cols] = gen.integers(9, 11, size=ATYPICAL_HIGH)
        y[a] = 1
    ids = tuple(f"{id_prefix}{i:04d}" for i in range(n))
    return Dataset(ids, x, y, 2, "cancer")


# ---------------------------------------------------------------------------
# split plans and bootstrap samples


@dataclass(frozen=True)
class SplitPlan:
    """Training-set membership for 2*n_repeats target models."""

    record_ids: tuple[str, ...]
    membership: tuple[frozenset[str], ...]
    seed: int = 0

    @property
    def n_models(self) -> int:
        return len(self.membership)

    def matrix(self) -> np.ndarray:
        """Boolean (n_records, n_models) membership matrix."""
        pos = {rid: i for i, rid in enumerate(self.record_ids)}
        m = np.zeros((len(self.record_ids), self.n_models), dtype=bool)
        for j, members in enumerate(self.membership):
            m[[pos[r] for r in members], j] = True
        return m

    def to_dict(self) -> dict:
        return {"seed": self.seed, "record_ids": list(self.record_ids),
                "membership": [sorted(m) for m in self.membership]}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(tuple(d["record_ids"]), tuple(frozenset(m) for m in d["membership"]), d.get("seed", 0))


def make_split_plan(dataset: Dataset, n_repeats: int = 50, seed: int = 0) -> SplitPlan:
    """Each repeat splits the records into two equal halves; every record lands
    in exactly ``n_repeats`` of the ``2 * n_repeats`` training sets."""
    n = len(dataset)
    if n % 2:
        raise DataError(f"split plans need an even record count, got {n}")
    if n_repeats < 1:
        raise DataError("n_repeats must be positive")
    gen = np.random.default_rng(hash64(seed, "split"))
    members = []
    for _ in range(n_repeats):
        perm = gen.permutation(n)
        members.append(frozenset(dataset.ids[i] for i in perm[: n // 2]))
        members.append(frozenset(dataset.ids[i] for i in perm[n // 2:]))
    return SplitPlan(tuple(dataset.ids), tuple(members), seed)


@dataclass(frozen=True)
class BootstrapSample:
    source: str
    ids: tuple[str, ...]
    seed: int

    def __len__(self) -> int:
        return len(self.ids)

    def dataset(self, source: Dataset) -> Dataset:
        return source.take(self.ids, f"{source.name}-boot")

    def to_dict(self) -> dict:
        return {"source": self.source, "seed": self.seed, "ids": list(self.ids)}

    @classmethod
    def from_dict(cls, d: dict) -> "BootstrapSample":
        return cls(d["source"], tuple(d["ids"]), int(d["seed"]))


def bootstrap_sample(dataset: Dataset, size: int, seed: int) -> BootstrapSample:
    if size < 1:
        raise DataError("bootstrap size must be positive")
    if len(dataset) == 0:
        raise DataError("cannot bootstrap an empty dataset")
    draws = np.random.default_rng(seed).integers(0, len(dataset), size)
    return BootstrapSample(dataset.name, tuple(dataset.ids[i] for i in draws), seed)
