"""Fully connected softmax classifiers trained by plain mini-batch gradient descent.

All heavy lifting is done on *stacks* of models: parameters carry a leading
model axis so that an ensemble of equally shaped models trains in one pass of
batched matrix products.  Every slice of a stack is computed independently,
so training a model alone or inside a stack gives bitwise-identical results.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

PROB_FLOOR = 1e-12

ACTIVATIONS = ("tanh", "relu")


class ConfigurationError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, model_index: int = 0):
        self.epoch = epoch
        self.model_index = model_index
        super().__init__(f"non-finite training loss in epoch {epoch} (model {model_index})")


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple[int, ...]
    hidden_activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise ConfigurationError("layer_sizes needs at least an input and an output size")
        if min(sizes) < 1:
            raise ConfigurationError(f"layer sizes must be positive, got {sizes}")
        if sizes[-1] < 2:
            raise ConfigurationError("a classifier needs at least 2 classes")
        if self.hidden_activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.hidden_activation!r}")

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "hidden_activation": self.hidden_activation}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(tuple(d["layer_sizes"]), d.get("hidden_activation", "tanh"))


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    l2: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError("epochs must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if not self.learning_rate >= 0:
            raise ConfigurationError("learning_rate must be non-negative")
        if not self.l2 >= 0:
            raise ConfigurationError("l2 coefficient must be non-negative")

    def replace(self, **changes) -> "TrainingConfig":
        return TrainingConfig(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Immutable per-layer weights (fan_in x fan_out) and biases."""

    spec: ModelSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...] = field(repr=False)

    def __post_init__(self):
        sizes = self.spec.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ConfigurationError("parameter count does not match the spec")
        frozen_w, frozen_b = [], []
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            w = np.array(w, dtype=np.float64)
            b = np.array(b, dtype=np.float64)
            if w.shape != (sizes[i], sizes[i + 1]) or b.shape != (sizes[i + 1],):
                raise ConfigurationError(f"layer {i} has shapes {w.shape}/{b.shape}")
            w.flags.writeable = False
            b.flags.writeable = False
            frozen_w.append(w)
            frozen_b.append(b)
        object.__setattr__(self, "weights", tuple(frozen_w))
        object.__setattr__(self, "biases", tuple(frozen_b))

    @classmethod
    def zeros(cls, spec: ModelSpec) -> "ModelParams":
        s = spec.layer_sizes
        return cls(spec, tuple(np.zeros((a, b)) for a, b in zip(s[:-1], s[1:])),
                   tuple(np.zeros(b) for b in s[1:]))

    @classmethod
    def init(cls, spec: ModelSpec, seed: int) -> "ModelParams":
        return _init_params(spec, np.random.default_rng(seed))

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def with_flat(self, vector: np.ndarray) -> "ModelParams":
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vector[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(vector[pos:pos + b.size].copy())
            pos += b.size
        return ModelParams(self.spec, tuple(ws), tuple(bs))

    def equals(self, other: "ModelParams") -> bool:
        """Bitwise equality of spec and every parameter array."""
        return (self.spec == other.spec
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))


def _init_params(spec: ModelSpec, gen: np.random.Generator) -> ModelParams:
    ws, bs = [], []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(gen.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return ModelParams(spec, tuple(ws), tuple(bs))


# ---------------------------------------------------------------------------
# stacked kernels: weights[l] is (M, fan_in, fan_out), biases[l] is (M, fan_out)
# and inputs are (M, B, n_features)


def _activate(z, kind):
    return np.tanh(z) if kind == "tanh" else np.maximum(z, 0.0)


def _activation_grad(z, h, kind):
    return 1.0 - h * h if kind == "tanh" else (z > 0).astype(z.dtype)


def _forward(weights, biases, x, kind):
    """Return (pre-activations, post-activations) for every layer; the last
    pre-activation is the logit block."""
    pre, post = [], [x]
    h = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = np.matmul(h, w) + b[:, None, :]
        pre.append(z)
        if i < last:
            h = _activate(z, kind)
            post.append(h)
    return pre, post


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _backward(weights, pre, post, dlogits, kind, need_input=False):
    """Backpropagate dlogits (M, B, C). Returns (dW list, db list, dx or None)."""
    n = len(weights)
    dws, dbs = [None] * n, [None] * n
    dz = dlogits
    dx = None
    for i in range(n - 1, -1, -1):
        dws[i] = np.matmul(np.swapaxes(post[i], 1, 2), dz)
        dbs[i] = dz.sum(axis=1)
        if i > 0 or need_input:
            dh = np.matmul(dz, np.swapaxes(weights[i], 1, 2))
            if i > 0:
                dz = dh * _activation_grad(pre[i - 1], post[i], kind)
            else:
                dx = dh
    return dws, dbs, dx


def _batch_objective_grads(weights, biases, x, y, l2, kind):
    """Mean cross-entropy plus (l2/2)*sum ||W||^2, for a stack of models.

    ``l2`` broadcasts against the model axis. Returns (loss per model, dW, db).
    """
    pre, post = _forward(weights, biases, x, kind)
    logp = _log_softmax(pre[-1])
    m, b = y.shape
    onehot = np.zeros_like(logp)
    np.put_along_axis(onehot, y[..., None], 1.0, axis=2)
    ce = -(logp * onehot).sum(axis=2).mean(axis=1)
    dlogits = (np.exp(logp) - onehot) / b
    dws, dbs, _ = _backward(weights, pre, post, dlogits, kind)
    l2 = np.broadcast_to(np.asarray(l2, dtype=np.float64), (m,))
    penalty = np.zeros(m)
    for i, w in enumerate(weights):
        penalty += 0.5 * l2 * (w * w).sum(axis=(1, 2))
        dws[i] = dws[i] + l2[:, None, None] * w
    return ce + penalty, dws, dbs


def _stack(params_list: Sequence[ModelParams]):
    weights = [np.stack([p.weights[i] for p in params_list]) for i in range(len(params_list[0].weights))]
    biases = [np.stack([p.biases[i] for p in params_list]) for i in range(len(params_list[0].biases))]
    return weights, biases


def _unstack(spec, weights, biases) -> list[ModelParams]:
    return [ModelParams(spec, tuple(w[m] for w in weights), tuple(b[m] for b in biases))
            for m in range(weights[0].shape[0])]


def _as_arrays(data):
    if isinstance(data, tuple):
        x, y = data
    else:
        x, y = data.X, data.y
    return np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.int64)


def _check_data(spec: ModelSpec, x, y):
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigurationError("training data must be a non-empty 2-D feature matrix")
    if x.shape[1] != spec.n_features:
        raise ConfigurationError(f"feature dimension {x.shape[1]} != spec input size {spec.n_features}")
    if y.shape != (x.shape[0],) or y.min() < 0 or y.max() >= spec.n_classes:
        raise ConfigurationError("labels must be class indices below the class count")


# ---------------------------------------------------------------------------
# public operations


def train_many(datasets: Sequence, spec: ModelSpec, configs: Sequence[TrainingConfig],
               init: Sequence[ModelParams] | None = None) -> list[ModelParams]:
    """Train one model per (dataset, config) pair as a single stacked run.

    All datasets must have the same size and all configs the same ``epochs``
    and ``batch_size``; learning rate, l2 and seed may differ per model.
    Each model's initial weights and epoch orders come from its own seed, so
    the result for model ``m`` does not depend on the rest of the stack.
    """
    if len(datasets) != len(configs) or not datasets:
        raise ConfigurationError("need one config per dataset")
    arrays = [_as_arrays(d) for d in datasets]
    for x, y in arrays:
        _check_data(spec, x, y)
    n = arrays[0][0].shape[0]
    if any(x.shape[0] != n for x, _ in arrays):
        raise ConfigurationError("stacked training needs equally sized datasets")
    epochs, batch = configs[0].epochs, configs[0].batch_size
    if any(c.epochs != epochs or c.batch_size != batch for c in configs):
        raise ConfigurationError("stacked training needs equal epochs and batch_size")
    if batch > n:
        raise ConfigurationError(f"batch_size {batch} exceeds training-set size {n}")

    gens = [np.random.default_rng(c.seed) for c in configs]
    if init is None:
        start = [_init_params(spec, g) for g in gens]
    else:
        start = list(init)
    weights, biases = _stack(start)
    xs = np.stack([x for x, _ in arrays])
    ys = np.stack([y for _, y in arrays])
    lr = np.array([c.learning_rate for c in configs])
    l2 = np.array([c.l2 for c in configs])
    m = len(configs)
    rows = np.arange(m)[:, None]
    kind = spec.hidden_activation
    for epoch in range(epochs):
        order = np.stack([g.permutation(n) for g in gens])
        total = np.zeros(m)
        for s in range(0, n, batch):
            idx = order[:, s:s + batch]
            loss, dws, dbs = _batch_objective_grads(weights, biases, xs[rows, idx], ys[rows, idx], l2, kind)
            total += loss
            for i in range(len(weights)):
                weights[i] = weights[i] - lr[:, None, None] * dws[i]
                biases[i] = biases[i] - lr[:, None] * dbs[i]
        bad = ~np.isfinite(total)
        if bad.any():
            raise DivergenceError(epoch, int(np.flatnonzero(bad)[0]))
    return _unstack(spec, weights, biases)


def train(dataset, spec: ModelSpec, config: TrainingConfig) -> ModelParams:
    """Train a single model; ``dataset`` is a Dataset or an (X, y) pair."""
    return train_many([dataset], spec, [config])[0]


def update_many(params: Sequence[ModelParams], batches: Sequence, config: TrainingConfig) -> list[ModelParams]:
    """Run ``config.epochs`` full-batch gradient steps, model m on batches[m]."""
    arrays = [_as_arrays(b) for b in batches]
    spec = params[0].spec
    for x, y in arrays:
        _check_data(spec, x, y)
    weights, biases = _stack(params)
    xs = np.stack([x for x, _ in arrays])
    ys = np.stack([y for _, y in arrays])
    for _ in range(config.epochs):
        loss, dws, dbs = _batch_objective_grads(weights, biases, xs, ys, config.l2, spec.hidden_activation)
        if not np.all(np.isfinite(loss)):
            raise DivergenceError(0, int(np.flatnonzero(~np.isfinite(loss))[0]))
        for i in range(len(weights)):
            weights[i] = weights[i] - config.learning_rate * dws[i]
            biases[i] = biases[i] - config.learning_rate * dbs[i]
    return _unstack(spec, weights, biases)


def update(params: ModelParams, batch, config: TrainingConfig) -> ModelParams:
    """Incremental full-batch gradient steps on ``batch`` only."""
    return update_many([params], [batch], config)[0]


def _features_2d(params: ModelParams, features):
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.spec.n_features:
        raise ConfigurationError(
            f"feature dimension {x2.shape[-1]} != spec input size {params.spec.n_features}")
    return x2, single


def last_layer_output(params: ModelParams, features) -> np.ndarray:
    """Pre-softmax logits for one feature vector or a matrix of them."""
    x, single = _features_2d(params, features)
    w, b = _stack([params])
    pre, _ = _forward(w, b, x[None], params.spec.hidden_activation)
    out = pre[-1][0]
    return out[0] if single else out


def predict(params: ModelParams, features) -> np.ndarray:
    return _softmax(last_layer_output(params, features))


def stacked_logits(params_list: Sequence[ModelParams], features) -> np.ndarray:
    """Logits of every model on every input: shape (n_models, n_inputs, n_classes)."""
    x, _ = _features_2d(params_list[0], features)
    w, b = _stack(params_list)
    xs = np.broadcast_to(x, (len(params_list),) + x.shape)
    pre, _ = _forward(w, b, xs, params_list[0].spec.hidden_activation)
    return pre[-1]


def stacked_predict(params_list: Sequence[ModelParams], features) -> np.ndarray:
    return _softmax(stacked_logits(params_list, features))


def loss_from_probability(p) -> np.ndarray | float:
    return -np.log(np.maximum(p, PROB_FLOOR))


def log_loss(params: ModelParams, record) -> float:
    """-ln p_y for a record, with the probability floored at 1e-12."""
    label = int(record.label)
    if not 0 <= label < params.spec.n_classes:
        raise ConfigurationError(f"label {label} outside 0..{params.spec.n_classes - 1}")
    return float(loss_from_probability(predict(params, record.features)[label]))


def objective(params: ModelParams, data, l2: float = 0.0) -> float:
    """Mean training cross-entropy plus the L2 penalty (the quantity train minimizes)."""
    x, y = _as_arrays(data)
    w, b = _stack([params])
    loss, _, _ = _batch_objective_grads(w, b, x[None], y[None], l2, params.spec.hidden_activation)
    return float(loss[0])


def param_gradients(params: ModelParams, data, l2: float = 0.0) -> ModelParams:
    """Gradient of ``objective`` w.r.t. every parameter, packed as ModelParams."""
    x, y = _as_arrays(data)
    w, b = _stack([params])
    _, dws, dbs = _batch_objective_grads(w, b, x[None], y[None], l2, params.spec.hidden_activation)
    return ModelParams(params.spec, tuple(d[0] for d in dws), tuple(d[0] for d in dbs))


ObjectiveGrad = Callable[[np.ndarray], np.ndarray] | np.ndarray


def input_gradients_stacked(params_list: Sequence[ModelParams], features: np.ndarray,
                            prob_grads: np.ndarray) -> np.ndarray:
    """d/dx of sum over models of <prob_grads[m], softmax(model_m(x))>.

    ``features`` is a single vector and ``prob_grads`` has shape
    (n_models, n_classes). Returns a vector shaped like ``features``.
    """
    x = np.asarray(features, dtype=np.float64)
    w, b = _stack(params_list)
    m = len(params_list)
    xs = np.broadcast_to(x, (m, 1, x.shape[-1]))
    pre, post = _forward(w, b, xs, params_list[0].spec.hidden_activation)
    p = _softmax(pre[-1])
    g = np.asarray(prob_grads, dtype=np.float64).reshape(m, 1, -1)
    dz = p * (g - (p * g).sum(axis=-1, keepdims=True))
    _, _, dx = _backward(w, pre, post, dz, params_list[0].spec.hidden_activation, need_input=True)
    return dx.sum(axis=0)[0]


def input_gradient(params: ModelParams, features, objective: ObjectiveGrad) -> np.ndarray:
    """Gradient of a scalar objective of the prediction vector w.r.t. the input.

    ``objective`` supplies d(objective)/d(probabilities): either a fixed
    vector (a linear objective) or a callable mapping the prediction vector to
    that gradient.
    """
    x, single = _features_2d(params, features)
    if not single:
        raise ConfigurationError("input_gradient takes a single feature vector")
    g = objective(predict(params, x[0])) if callable(objective) else objective
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (params.spec.n_classes,):
        raise ConfigurationError("objective gradient must have one entry per class")
    return input_gradients_stacked([params], x[0], g[None])


def accuracy(params: ModelParams, data) -> float:
    x, y = _as_arrays(data)
    return float((last_layer_output(params, x).argmax(axis=1) == y).mean())


# ---------------------------------------------------------------------------
# persistence


def save_model(path: str | Path, params: ModelParams, config: TrainingConfig | None = None) -> None:
    meta = {"spec": params.spec.to_dict(), "config": config.to_dict() if config else None}
    arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path: str | Path) -> tuple[ModelParams, TrainingConfig | None]:
    with np.load(path) as data:
        meta = json.loads(data["meta"].tobytes().decode())
        spec = ModelSpec.from_dict(meta["spec"])
        n = len(spec.layer_sizes) - 1
        params = ModelParams(spec, tuple(data[f"W{i}"] for i in range(n)), tuple(data[f"b{i}"] for i in range(n)))
    config = TrainingConfig(**meta["config"]) if meta["config"] else None
    return params, config
