"""Dense ReLU networks with hand-written reverse-mode gradients.

Everything is float64 numpy. A model is a chain of affine layers with ReLU
between them and identity on the output; the output width is the number of
labels. Inputs may be a single vector of shape ``(n,)`` or a batch ``(m, n)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

PROB_CLAMP = 1e-12


class DimensionError(ValueError):
    pass


class LabelError(ValueError):
    pass


@dataclass(frozen=True)
class CrossEntropy:
    pass


@dataclass(frozen=True)
class Hinge:
    """Multiclass hinge on softmax confidences with tolerance ``k``."""

    k: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.k):
            raise ValueError(f"hinge tolerance must be finite, got {self.k}")
        if self.k > 0:
            warnings.warn(f"hinge tolerance k={self.k} is positive", stacklevel=2)


LossKind = Union[CrossEntropy, Hinge]


@dataclass
class ModelParams:
    weights: list  # W_i has shape (out_i, in_i)
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if not self.weights or len(self.weights) != len(self.biases):
            raise DimensionError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(f"layer {i} input {w.shape[1]} != previous output "
                                     f"{self.weights[i - 1].shape[0]}")

    @property
    def input_width(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def sizes(self) -> list:
        return [self.input_width] + [w.shape[0] for w in self.weights]

    def copy(self) -> "ModelParams":
        return ModelParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])

    def from_vector(self, vec: np.ndarray) -> "ModelParams":
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[pos:pos + w.size].reshape(w.shape))
            pos += w.size
            bs.append(vec[pos:pos + b.size].copy())
            pos += b.size
        return ModelParams(ws, bs)

    def equals(self, other: "ModelParams") -> bool:
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b) for a, b in zip(self.weights + self.biases,
                                                 other.weights + other.biases))


class Gradients(NamedTuple):
    weights: list
    biases: list

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for pair in zip(self.weights, self.biases) for a in pair])


def init_model(sizes: Sequence[int], seed: int) -> ModelParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        r = math.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-r, r, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return ModelParams(ws, bs)


def logistic_model(w) -> ModelParams:
    """Two-class single-layer net whose softmax reproduces logistic regression.

    Logits are ``(0, w.x)``, so ``softmax[1] = sigmoid(w.x)``; label 1 plays
    the role of y=+1 and label 0 of y=-1.
    """
    w = np.asarray(w, dtype=np.float64)
    return ModelParams([np.vstack([np.zeros_like(w), w])], [np.zeros(2)])


def _as_batch(model: ModelParams, x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.input_width:
        raise DimensionError(f"input shape {x.shape} does not match model input width "
                             f"{model.input_width}")
    return X, single


def _forward_cache(model: ModelParams, X: np.ndarray) -> list:
    # acts[i] is the input to layer i; the last entry is the logits
    acts = [X]
    n = len(model.weights)
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = acts[-1] @ w.T + b
        acts.append(np.maximum(z, 0.0) if i < n - 1 else z)
    return acts


def _backward(model: ModelParams, acts: list, dz: np.ndarray) -> tuple:
    """Pull ``dz`` (batch, classes) back to summed parameter grads and per-row input grads."""
    dws, dbs = [None] * len(model.weights), [None] * len(model.weights)
    g = dz
    for i in range(len(model.weights) - 1, -1, -1):
        dws[i] = g.T @ acts[i]
        dbs[i] = g.sum(axis=0)
        g = g @ model.weights[i]
        if i > 0:
            # ReLU subgradient at 0 is 0
            g = g * (acts[i] > 0.0)
    return dws, dbs, g


def forward(model: ModelParams, x) -> np.ndarray:
    """Logits of the network for a vector or a batch of row vectors."""
    X, single = _as_batch(model, x)
    z = _forward_cache(model, X)[-1]
    return z[0] if single else z


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def predict(model: ModelParams, x) -> np.ndarray:
    return np.argmax(forward(model, x), axis=-1)


def predict_proba(model: ModelParams, x) -> np.ndarray:
    return softmax(forward(model, x))


def logistic_loss(w, x, y: int) -> float:
    """log(1 + exp(-y w.x)) for y in {-1, +1}."""
    w = np.asarray(w, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if w.shape != x.shape:
        raise DimensionError(f"w {w.shape} vs x {x.shape}")
    if y not in (-1, 1):
        raise LabelError(f"logistic labels are -1/+1, got {y}")
    return float(np.logaddexp(0.0, -y * float(w @ x)))


def cross_entropy_loss(probs, y: int) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    if not 0 <= y < probs.shape[-1]:
        raise LabelError(f"label {y} out of range for width {probs.shape[-1]}")
    return float(-math.log(max(probs[y], PROB_CLAMP)))


def hinge_loss(yhat, label: int, k: float) -> float:
    yhat = np.asarray(yhat, dtype=np.float64)
    if yhat.shape[-1] < 2:
        raise ValueError("hinge loss needs at least two classes")
    if not 0 <= label < yhat.shape[-1]:
        raise LabelError(f"label {label} out of range")
    others = np.delete(yhat, label)
    return max(0.0, k + float(others.max()) - float(yhat[label]))


def kl_divergence(p, q) -> float:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"KL width mismatch {p.shape} vs {q.shape}")
    q = np.maximum(q, PROB_CLAMP)
    nz = p > 0
    return float(np.sum(p[nz] * (np.log(p[nz]) - np.log(q[nz]))))


def _check_labels(y, n_rows: int, n_classes: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(y)).astype(np.int64)
    if y.shape != (n_rows,):
        raise DimensionError(f"{y.shape[0]} labels for {n_rows} inputs")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise LabelError(f"labels must lie in [0, {n_classes})")
    return y


def loss_and_dlogits(logits: np.ndarray, y: np.ndarray, loss: LossKind) -> tuple:
    """Per-row loss values and their gradients w.r.t. the logits."""
    p = softmax(logits)
    rows = np.arange(len(y))
    if isinstance(loss, CrossEntropy):
        values = -np.log(np.maximum(p[rows, y], PROB_CLAMP))
        dz = p.copy()
        # p_y - 1 summed from the other classes keeps tiny gradients nonzero
        dz[rows, y] = 0.0
        dz[rows, y] = -dz.sum(axis=1)
        return values, dz
    if isinstance(loss, Hinge):
        if p.shape[1] < 2:
            raise ValueError("hinge loss needs at least two classes")
        masked = p.copy()
        masked[rows, y] = -np.inf
        rival = np.argmax(masked, axis=1)  # first maximiser wins ties
        margin = loss.k + p[rows, rival] - p[rows, y]
        values = np.maximum(margin, 0.0)
        g = np.zeros_like(p)
        active = margin > 0.0
        g[rows[active], rival[active]] = 1.0
        g[rows[active], y[active]] = -1.0
        # softmax Jacobian is symmetric: J^T g = p * (g - p.g)
        dz = p * (g - np.sum(p * g, axis=1, keepdims=True))
        return values, dz
    raise TypeError(f"unknown loss kind {loss!r}")


def backprop(model: ModelParams, x, y, loss: LossKind = CrossEntropy()) -> tuple:
    """Mean loss over the batch and its exact gradient w.r.t. every parameter."""
    X, _ = _as_batch(model, x)
    y = _check_labels(y, X.shape[0], model.n_classes)
    acts = _forward_cache(model, X)
    values, dz = loss_and_dlogits(acts[-1], y, loss)
    m = X.shape[0]
    dws, dbs, _ = _backward(model, acts, dz / m)
    return float(values.mean()), Gradients(dws, dbs)


def backprop_dlogits(model: ModelParams, x, dz) -> Gradients:
    """Parameter gradient of ``sum(dz * logits)`` (for custom loss heads)."""
    X, _ = _as_batch(model, x)
    acts = _forward_cache(model, X)
    dws, dbs, _ = _backward(model, acts, np.atleast_2d(dz))
    return Gradients(dws, dbs)


def input_gradient(model: ModelParams, x, y, loss: LossKind = CrossEntropy()) -> np.ndarray:
    """Gradient of the loss w.r.t. the input, one row per example."""
    X, single = _as_batch(model, x)
    y = _check_labels(y, X.shape[0], model.n_classes)
    acts = _forward_cache(model, X)
    _, dz = loss_and_dlogits(acts[-1], y, loss)
    _, _, gx = _backward(model, acts, dz)
    return gx[0] if single else gx


def logits_input_vjp(model: ModelParams, x, dz) -> np.ndarray:
    """Gradient of ``dz . logits(x)`` w.r.t. ``x``."""
    X, single = _as_batch(model, x)
    acts = _forward_cache(model, X)
    _, _, gx = _backward(model, acts, np.atleast_2d(np.asarray(dz, dtype=np.float64)))
    return gx[0] if single else gx


def logits_jacobian(model: ModelParams, x) -> np.ndarray:
    """d logits / d x, shape (classes, n) for a single input."""
    X, _ = _as_batch(model, x)
    acts = _forward_cache(model, X)
    jac = np.eye(model.input_width)
    for i, w in enumerate(model.weights):
        jac = w @ jac
        if i < len(model.weights) - 1:
            jac = jac * (acts[i + 1][0] > 0.0)[:, None]
    return jac


def softmax_jacobian(model: ModelParams, x) -> np.ndarray:
    """d softmax / d x, shape (classes, n)."""
    p = predict_proba(model, np.asarray(x, dtype=np.float64))
    dsdz = np.diag(p) - np.outer(p, p)
    return dsdz @ logits_jacobian(model, x)


def sgd_step(model: ModelParams, grads: Gradients, eta: float) -> ModelParams:
    if eta <= 0:
        raise ValueError("learning rate must be positive")
    return ModelParams([w - eta * g for w, g in zip(model.weights, grads.weights)],
                       [b - eta * g for b, g in zip(model.biases, grads.biases)])


@dataclass(frozen=True)
class AdamHyper:
    alpha: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.alpha <= 0 or self.eps <= 0:
            raise ValueError("Adam step size and epsilon must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    params: np.ndarray
    m: np.ndarray = None
    v: np.ndarray = None
    t: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.m is None:
            self.m = np.zeros_like(self.params)
        if self.v is None:
            self.v = np.zeros_like(self.params)


def adam_step(state: AdamState, grads, hyper: AdamHyper = AdamHyper()) -> tuple:
    """One bias-corrected Adam update. Returns the new state and its params."""
    g = np.asarray(grads, dtype=np.float64)
    t = state.t + 1
    m = hyper.beta1 * state.m + (1 - hyper.beta1) * g
    v = hyper.beta2 * state.v + (1 - hyper.beta2) * g * g
    m_hat = m / (1 - hyper.beta1 ** t)
    v_hat = v / (1 - hyper.beta2 ** t)
    params = state.params - hyper.alpha * m_hat / (np.sqrt(v_hat) + hyper.eps)
    new = AdamState(params, m, v, t)
    return new, params


@dataclass
class TrainConfig:
    loss: LossKind = field(default_factory=CrossEntropy)
    epochs: int = 50
    eta: float = 0.1
    batch_mode: str = "perm"  # "perm": shuffled passes, "sample": draw with replacement
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.batch_mode not in ("perm", "sample"):
            raise ValueError(f"batch_mode must be 'perm' or 'sample', got {self.batch_mode!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.eta <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and eta > 0 required")


def train(model: ModelParams, dataset, config: TrainConfig = TrainConfig(),
          on_epoch: Optional[Callable[[int, ModelParams], None]] = None) -> ModelParams:
    """Minibatch SGD over ``dataset``; bit-reproducible for a fixed seed."""
    X, y = dataset.X, dataset.y
    n = len(y)
    if n == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(config.seed)
    model = model.copy()
    bs = config.batch_size
    for epoch in range(config.epochs):
        if config.batch_mode == "perm":
            order = rng.permutation(n)
        else:
            order = rng.integers(0, n, size=n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, grads = backprop(model, X[idx], y[idx], config.loss)
            model = sgd_step(model, grads, config.eta)
        if on_epoch is not None:
            on_epoch(epoch, model)
    return model


def accuracy(model: ModelParams, dataset) -> float:
    return float(np.mean(predict(model, dataset.X) == dataset.y))


def log_loss(model: ModelParams, dataset) -> float:
    p = predict_proba(model, dataset.X)
    return float(np.mean(-np.log(np.maximum(p[np.arange(len(dataset.y)), dataset.y],
                                            PROB_CLAMP))))
