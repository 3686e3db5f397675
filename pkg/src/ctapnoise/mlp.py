"""A small feedforward classifier written directly in numpy.

Layers follow ``z = W y + b`` with LeakyReLU between hidden layers and a
softmax output, trained on categorical cross-entropy with Adam.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .rng import derive_rng

HIDDEN = (128, 100)
N_FEATURES = 3
LEAKY_ALPHA = 0.01
PROB_FLOOR = 1e-12


@dataclass
class MlpModel:
    layer_dims: list
    weights: list
    biases: list
    leaky_alpha: float = LEAKY_ALPHA
    seed: int | None = None

    def __post_init__(self):
        self.layer_dims = [int(d) for d in self.layer_dims]
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.validate()

    def validate(self) -> None:
        dims = self.layer_dims
        if len(dims) < 2 or len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("layer count does not match layer_dims")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]):
                raise ValueError(f"weight {i} has shape {w.shape}, expected {(dims[i + 1], dims[i])}")
            if b.shape != (dims[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}, expected {(dims[i + 1],)}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def n_classes(self) -> int:
        return self.layer_dims[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(list(self.layer_dims), [w.copy() for w in self.weights],
                        [b.copy() for b in self.biases], self.leaky_alpha, self.seed)

    def parameters(self):
        return self.weights + self.biases


def init_model(n_classes: int, seed: int, hidden=HIDDEN, n_inputs: int = N_FEATURES,
               allow_any_k: bool = False) -> MlpModel:
    """Uniform weights with standard deviation ``sqrt(2 / fan_in)``, zero biases."""
    if not allow_any_k and n_classes not in (4, 5):
        raise ValueError("the classifier has 4 or 5 outputs")
    dims = [n_inputs, *hidden, n_classes]
    rng = derive_rng(seed, "init")
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        # U(-a, a) has variance a^2 / 3
        a = math.sqrt(3.0) * math.sqrt(2.0 / fan_in)
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(dims, weights, biases, seed=seed)


def leaky_relu(z, alpha: float = LEAKY_ALPHA):
    return np.where(z >= 0, z, alpha * z)


def softmax(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(model: MlpModel, x):
    y = np.atleast_2d(np.asarray(x, dtype=float))
    acts, pre = [y], []
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = y @ w.T + b
        pre.append(z)
        y = softmax(z) if i == last else leaky_relu(z, model.leaky_alpha)
        acts.append(y)
    return acts, pre


def forward(model: MlpModel, x) -> np.ndarray:
    """Class probabilities; a single feature vector gives a 1-D result."""
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("inputs must be finite")
    out = _forward_cache(model, x)[0][-1]
    return out[0] if x.ndim == 1 else out


def loss(pred, target) -> float:
    """Mean categorical cross-entropy with predictions clamped at 1e-12."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    return float(-np.sum(target * np.log(np.maximum(pred, PROB_FLOOR))) / pred.shape[0])


def backward(model: MlpModel, x, target):
    """Gradients of :func:`loss` w.r.t. ``(weights, biases)``.

    Returns ``(loss, grad_weights, grad_biases)``.  The clamp only acts on
    probabilities below 1e-12, where its derivative is zero.
    """
    acts, pre = _forward_cache(model, x)
    target = np.atleast_2d(np.asarray(target, dtype=float))
    p = acts[-1]
    n = p.shape[0]
    value = float(-np.sum(target * np.log(np.maximum(p, PROB_FLOOR))) / n)
    # d loss / d p_j = -t_j / p_j where unclamped; softmax Jacobian follows
    g_p = np.where(p > PROB_FLOOR, -target / np.maximum(p, PROB_FLOOR), 0.0) / n
    delta = p * (g_p - np.sum(g_p * p, axis=1, keepdims=True))
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = delta.T @ acts[i]
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i]) * np.where(pre[i - 1] >= 0, 1.0, model.leaky_alpha)
    return value, gw, gb


def predict(model: MlpModel, x) -> np.ndarray:
    """Argmax class; ``np.argmax`` returns the first maximum on ties."""
    return np.argmax(np.atleast_2d(forward(model, x)), axis=1)


def evaluate(model: MlpModel, x, y):
    """Accuracy and confusion matrix (rows true class, columns predicted)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y))
    if x.shape[0] == 0:
        raise ValueError("cannot evaluate on an empty set")
    if y.shape[1] != model.n_classes:
        raise ValueError(f"labels have {y.shape[1]} classes, model has {model.n_classes}")
    true = np.argmax(y, axis=1)
    pred = predict(model, x)
    k = model.n_classes
    confusion = np.zeros((k, k), dtype=int)
    np.add.at(confusion, (true, pred), 1)
    return float(np.mean(true == pred)), confusion


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    early_stop_patience: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    test_accuracy: float | None = None
    confusion: list | None = None

    def to_dict(self) -> dict:
        return asdict(self)


class TrainingDiverged(RuntimeError):
    pass


def _metrics(model, x, y):
    p = forward(model, x)
    p = np.atleast_2d(p)
    acc = float(np.mean(np.argmax(p, axis=1) == np.argmax(y, axis=1)))
    return loss(p, y), acc


def train(model: MlpModel, train_xy, val_xy, cfg: TrainConfig = TrainConfig(), test_xy=None):
    """Mini-batch Adam with early stopping on validation loss.

    ``train_xy``, ``val_xy`` and ``test_xy`` are ``(X, Y)`` pairs.  The
    parameters of the epoch with the lowest validation loss are restored.
    Returns ``(model, report)``; the input model is not modified.
    """
    x, y = (np.asarray(a, dtype=float) for a in train_xy)
    xv, yv = (np.asarray(a, dtype=float) for a in val_xy)
    if x.shape[0] == 0:
        raise ValueError("empty training set")
    if cfg.batch_size > x.shape[0]:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds training set size {x.shape[0]}")
    if y.shape[1] != model.n_classes:
        raise ValueError(f"labels have {y.shape[1]} classes, model has {model.n_classes}")
    model = model.copy()
    params = model.parameters()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = derive_rng(cfg.seed, "batches")
    report = TrainReport()
    have_val = xv.shape[0] > 0
    best, best_loss, since = model.copy(), math.inf, 0
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(x.shape[0])
        for start in range(0, x.shape[0], cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            value, gw, gb = backward(model, x[idx], y[idx])
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            step += 1
            c1 = 1 - cfg.beta1 ** step
            c2 = 1 - cfg.beta2 ** step
            for p, g, mi, vi in zip(params, gw + gb, m, v):
                mi *= cfg.beta1
                mi += (1 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1 - cfg.beta2) * g * g
                p -= cfg.learning_rate * (mi / c1) / (np.sqrt(vi / c2) + cfg.eps)
        tl, ta = _metrics(model, x, y)
        if not math.isfinite(tl):
            raise TrainingDiverged(f"non-finite training loss after epoch {epoch}")
        report.train_loss.append(tl)
        report.train_accuracy.append(ta)
        vl, va = _metrics(model, xv, yv) if have_val else (tl, ta)
        report.val_loss.append(vl)
        report.val_accuracy.append(va)
        report.stopped_epoch = epoch
        if vl < best_loss:
            best, best_loss, since = model.copy(), vl, 0
            report.best_epoch = epoch
        else:
            since += 1
            if since >= cfg.early_stop_patience:
                break
    model = best
    if test_xy is not None and np.asarray(test_xy[0]).shape[0] > 0:
        acc, conf = evaluate(model, *test_xy)
        report.test_accuracy = acc
        report.confusion = conf.tolist()
    return model, report


# --------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: MlpModel, config: TrainConfig | None = None, metrics: dict | None = None) -> dict:
    return {
        "layer_dims": model.layer_dims,
        "leaky_alpha": model.leaky_alpha,
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "seed": model.seed,
        "config": config.to_dict() if config is not None else None,
        "metrics": metrics,
    }


def model_from_dict(d: dict) -> MlpModel:
    try:
        return MlpModel(d["layer_dims"], d["weights"], d["biases"], d.get("leaky_alpha", LEAKY_ALPHA),
                        d.get("seed"))
    except KeyError as exc:
        raise ValueError(f"checkpoint missing field {exc}") from exc


def save_model(model: MlpModel, path, config: TrainConfig | None = None, metrics: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, config, metrics), fh)


def load_model(path) -> MlpModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
