"""Fixed-topology feed-forward classifier trained with hand-derived backprop and Adam.

Topology: input -> 64 -> 64 -> 64 -> 32 -> n_classes, ReLU on hidden layers,
softmax output, sparse categorical cross-entropy loss. Class ids are 1-based
at the API boundary and 0-based internally.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from cattle_tfd.errors import EmptyDatasetError, ValidationError

HIDDEN = (64, 64, 64, 32)
N_OUTPUTS = 9
PROB_FLOOR = 1e-12

MAGIC = b"CTFDMLP\x00"
FORMAT_VERSION = 1


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # each (fan_in, fan_out)
    biases: list[np.ndarray]

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def astype(self, dtype) -> "MlpModel":
        return MlpModel([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])


def layer_dims(input_dim: int, n_classes: int = N_OUTPUTS) -> tuple[int, ...]:
    return (input_dim, *HIDDEN, n_classes)


def closed_form_param_count(input_dim: int, n_classes: int = N_OUTPUTS) -> int:
    dims = layer_dims(input_dim, n_classes)
    return sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))


def init_model(input_dim: int, seed: int = 0, n_classes: int = N_OUTPUTS) -> MlpModel:
    """Glorot-uniform weights from a seeded generator, zero biases."""
    if input_dim < 1:
        raise ValidationError("input_dim must be >= 1")
    rng = np.random.default_rng(seed)
    dims = layer_dims(input_dim, n_classes)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(weights, biases)


def param_count(model: MlpModel) -> int:
    return sum(p.size for p in model.params())


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _check_input(model: MlpModel, x: np.ndarray) -> None:
    if x.shape[-1] != model.input_dim:
        raise ValidationError(f"expected {model.input_dim} features, got {x.shape[-1]}")
    if not np.isfinite(x).all():
        raise ValidationError("input contains non-finite values")


def _forward(model: MlpModel, x: np.ndarray):
    """Return (pre-activations, activations, logits) for backprop."""
    acts = [x]
    pre = []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        if i < last:
            h = np.maximum(z, 0.0)
            acts.append(h)
    return pre, acts, pre[-1]


def logits(model: MlpModel, x) -> np.ndarray:
    x = np.asarray(x)
    _check_input(model, x)
    return _forward(model, x)[2]


def forward(model: MlpModel, x) -> np.ndarray:
    """Class probabilities for one feature vector or a (batch, features) array."""
    return softmax(logits(model, x))


def loss_sparse_ce(probs, label: int) -> float:
    """``-ln p[label]`` with ``p`` floored at 1e-12; ``label`` is 1-based."""
    probs = np.asarray(probs)
    if not 1 <= int(label) <= probs.shape[-1]:
        raise ValidationError(f"label {label} outside 1..{probs.shape[-1]}")
    return float(-np.log(max(probs[int(label) - 1], PROB_FLOOR)))


def batch_loss(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels - 1]
    return float(-np.mean(np.log(np.maximum(picked, PROB_FLOOR))))


def _check_labels(labels: np.ndarray, n_classes: int) -> None:
    if labels.size and (labels.min() < 1 or labels.max() > n_classes):
        raise ValidationError(f"labels must lie in 1..{n_classes}")


def backward(model: MlpModel, X, labels):
    """Gradients of the mean batch loss.

    Returns ``(grads, loss)`` where ``grads`` follows ``model.params()`` order
    (W0, b0, W1, b1, ...).
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError("batch must be a non-empty 2-D array")
    if labels.shape != (X.shape[0],):
        raise ValidationError("labels must be one per row of X")
    _check_input(model, X)
    _check_labels(labels, model.n_classes)

    pre, acts, z = _forward(model, X)
    probs = softmax(z)
    loss = batch_loss(probs, labels)
    n = X.shape[0]
    delta = probs
    delta[np.arange(n), labels - 1] -= 1.0
    delta /= n

    grads = [None] * (2 * len(model.weights))
    for i in range(len(model.weights) - 1, -1, -1):
        grads[2 * i] = acts[i].T @ delta
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * (pre[i - 1] > 0)
    return grads, loss


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7
    lr: float = 0.001

    @classmethod
    def for_model(cls, model: MlpModel, **hyper) -> "AdamState":
        params = model.params()
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **hyper)


def adam_step(model: MlpModel, grads, state: AdamState):
    """One Adam update applied in place; returns ``(model, state)``."""
    params = model.params()
    if len(grads) != len(params):
        raise ValidationError("gradient list does not match model parameters")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValidationError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v / c2)
        denom += state.eps
        p -= state.lr * (m / c1) / denom
    return model, state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")


@dataclass
class TrainResult:
    model: MlpModel
    loss_history: list[float] = field(default_factory=list)
    state: AdamState | None = None


def iter_batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train(model: MlpModel, X, labels, config: TrainConfig = TrainConfig(), state: AdamState | None = None):
    """Mini-batch Adam training with a seeded per-epoch shuffle.

    ``loss_history`` holds the sample-weighted mean training loss of each epoch,
    measured on each batch before its update. ``X`` may be any object that
    supports ``len`` and fancy indexing by row, such as a lazily scaled view.
    """
    if not hasattr(X, "__getitem__") or isinstance(X, (list, tuple)):
        X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(X) == 0:
        raise EmptyDatasetError("training set is empty")
    if labels.shape != (len(X),):
        raise ValidationError("labels must be one per row of X")
    state = state or AdamState.for_model(model)
    rng = np.random.default_rng(config.shuffle_seed)
    history = []
    n = len(X)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for idx in iter_batches(n, config.batch_size, order):
            grads, loss = backward(model, X[idx], labels[idx])
            adam_step(model, grads, state)
            total += loss * len(idx)
        history.append(total / n)
    return TrainResult(model, history, state)


def predict(model: MlpModel, x) -> np.ndarray | int:
    """1-based argmax class; ties go to the lowest class id."""
    probs = forward(model, x)
    pred = np.argmax(probs, axis=-1) + 1
    return int(pred) if np.ndim(pred) == 0 else pred


def save_model(model: MlpModel, path) -> None:
    """Binary layout: magic, u32 version, u32 n_dims, u64 dims, then f64 LE W/b per layer."""
    dims = model.dims
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}Q", *dims))
        for w, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_model(path) -> MlpModel:
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise ValidationError(f"{path}: not a model file (bad magic)")
    off = len(MAGIC)
    version, n_dims = struct.unpack_from("<II", data, off)
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported format version {version}")
    off += 8
    dims = struct.unpack_from(f"<{n_dims}Q", data, off)
    off += 8 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = np.frombuffer(data, dtype="<f8", count=fan_in * fan_out, offset=off)
        off += 8 * fan_in * fan_out
        b = np.frombuffer(data, dtype="<f8", count=fan_out, offset=off)
        off += 8 * fan_out
        weights.append(w.reshape(fan_in, fan_out).astype(np.float64))
        biases.append(b.astype(np.float64))
    if off != len(data):
        raise ValidationError(f"{path}: trailing bytes after model payload")
    return MlpModel(weights, biases)
