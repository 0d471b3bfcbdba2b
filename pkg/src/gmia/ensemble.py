"""Reference-model ensembles trained on bootstrap samples of the adversary's pool."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from ._seeding import hash64
from .datasets import BootstrapSample, Dataset, Record, bootstrap_sample, from_records
from .model import (
    ConfigurationError, ModelParams, ModelSpec, TrainingConfig,
    load_model, save_model, stacked_logits, stacked_predict, train_many, update_many,
)


class ContaminationError(ValueError):
    """The target record appears in a reference training set."""


@dataclass(frozen=True, eq=False)
class Ensemble:
    models: tuple[ModelParams, ...]
    manifests: tuple[BootstrapSample, ...]
    spec: ModelSpec
    config: TrainingConfig
    seed: int
    pool: Dataset
    kind: str = "reference"
    target_record_id: str | None = None

    def __post_init__(self):
        if len(self.models) < 1 or len(self.models) != len(self.manifests):
            raise ConfigurationError("an ensemble needs one manifest per model")
        if any(m.spec != self.spec for m in self.models):
            raise ConfigurationError("all ensemble members must share one spec")
        if (self.kind == "positive") != (self.target_record_id is not None):
            raise ConfigurationError("positive ensembles (and only those) name a target record")

    @property
    def k(self) -> int:
        return len(self.models)

    def contains(self, record_id: str) -> bool:
        return any(record_id in set(m.ids) for m in self.manifests)

    def check_excludes(self, record_id: str) -> None:
        if self.kind != "reference":
            raise ConfigurationError("expected a reference ensemble")
        for i, m in enumerate(self.manifests):
            if record_id in m.ids:
                raise ContaminationError(f"record {record_id!r} is in the training set of reference model {i}")

    def logits(self, features) -> np.ndarray:
        """(k, n, C) logits, or (k, C) for a single feature vector."""
        x = np.asarray(features, dtype=np.float64)
        out = stacked_logits(self.models, x)
        return out[:, 0] if x.ndim == 1 else out

    def probabilities(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        out = stacked_predict(self.models, x)
        return out[:, 0] if x.ndim == 1 else out

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.spec.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def model_seed(seed: int, i: int) -> int:
    return hash64(seed, i)


def build_reference_models(reference_pool: Dataset, k: int, sample_size: int, spec: ModelSpec,
                           config: TrainingConfig, seed: int, jobs: int = 1) -> Ensemble:
    """Train ``k`` models, model i on a bootstrap sample drawn with seed_i = hash64(seed, i)."""
    if len(reference_pool) == 0:
        raise ConfigurationError("empty reference pool")
    if k < 2:
        raise ConfigurationError("an ensemble needs k >= 2")
    manifests = tuple(bootstrap_sample(reference_pool, sample_size, model_seed(seed, i)) for i in range(k))
    configs = [config.replace(seed=hash64(model_seed(seed, i), "train")) for i in range(k)]
    datasets = [m.dataset(reference_pool) for m in manifests]
    models = train_stack(datasets, spec, configs, jobs=jobs)
    return Ensemble(tuple(models), manifests, spec, config, seed, reference_pool)


def train_stack(datasets: Sequence[Dataset], spec: ModelSpec, configs: Sequence[TrainingConfig],
                jobs: int = 1) -> list[ModelParams]:
    """``train_many`` split across ``jobs`` worker processes.

    Stack slices are independent, so the chunking never changes the result.
    """
    if jobs <= 1 or len(datasets) < 2:
        return train_many(datasets, spec, configs)
    from concurrent.futures import ProcessPoolExecutor

    bounds = np.linspace(0, len(datasets), min(jobs, len(datasets)) + 1).astype(int)
    chunks = [(list(datasets[a:b]), spec, list(configs[a:b])) for a, b in zip(bounds[:-1], bounds[1:])]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_train_chunk, chunks))
    return [m for part in parts for m in part]


def _train_chunk(args):
    datasets, spec, configs = args
    return train_many(datasets, spec, configs)


def build_positive_reference_models(ensemble: Ensemble, target: Record, update_config: TrainingConfig,
                                    n_batches: int = 5) -> Ensemble:
    """Pair every reference model with an incrementally updated copy that has seen ``target``.

    For model i, ``n_batches`` batches of ``update_config.batch_size`` records
    are drawn from model i's own bootstrap sample; the target is appended to
    each and ``update_config.epochs`` gradient steps are taken per batch.
    """
    ensemble.check_excludes(target.id)
    models = list(ensemble.models)
    if n_batches > 0:
        gens = [np.random.default_rng(hash64(model_seed(ensemble.seed, i), "positive", target.id))
                for i in range(ensemble.k)]
        sets = [m.dataset(ensemble.pool) for m in ensemble.manifests]
        for _ in range(n_batches):
            batches = []
            for g, ds in zip(gens, sets):
                size = min(update_config.batch_size, len(ds))
                idx = g.choice(len(ds), size=size, replace=False)
                batch = [ds.record(int(j)) for j in idx] + [target]
                batches.append(from_records(batch, ds.class_count))
            models = update_many(models, batches, update_config)
    return replace(ensemble, models=tuple(models), kind="positive", target_record_id=target.id)


def ensemble_label_probabilities(ensemble: Ensemble, query: Record | np.ndarray, label: int) -> np.ndarray:
    """Probability of ``label`` under each model; length k."""
    features = query.features if isinstance(query, Record) else query
    return ensemble.probabilities(features)[..., label]


# ---------------------------------------------------------------------------
# persistence


def save_ensemble(directory: str | Path, ensemble: Ensemble) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "k": ensemble.k,
        "kind": ensemble.kind,
        "target_record_id": ensemble.target_record_id,
        "seed": ensemble.seed,
        "model_seeds": [model_seed(ensemble.seed, i) for i in range(ensemble.k)],
        "spec": ensemble.spec.to_dict(),
        "spec_digest": ensemble.digest(),
        "config": ensemble.config.to_dict(),
        "pool": ensemble.pool.name,
        "models": [f"model-{i:03d}.npz" for i in range(ensemble.k)],
        "manifests": [f"manifest-{i:03d}.json" for i in range(ensemble.k)],
    }
    for i, (params, manifest) in enumerate(zip(ensemble.models, ensemble.manifests)):
        save_model(directory / meta["models"][i], params)
        (directory / meta["manifests"][i]).write_text(json.dumps(manifest.to_dict()))
    (directory / "ensemble.json").write_text(json.dumps(meta, indent=2, sort_keys=True))


def load_ensemble(directory: str | Path, pool: Dataset) -> Ensemble:
    directory = Path(directory)
    meta = json.loads((directory / "ensemble.json").read_text())
    models = tuple(load_model(directory / name)[0] for name in meta["models"])
    manifests = tuple(BootstrapSample.from_dict(json.loads((directory / name).read_text()))
                      for name in meta["manifests"])
    return Ensemble(models, manifests, ModelSpec.from_dict(meta["spec"]), TrainingConfig(**meta["config"]),
                    meta["seed"], pool, meta["kind"], meta["target_record_id"])
