"""Multinomial logistic regression and a one-hidden-layer MLP with hand-written gradients.

Parameters travel as one flat float64 vector; :meth:`ModelSpec.layout`
fixes the order of the tensors inside it::

    logistic_regression: W (d, C), b (C,)
    mlp:                 W1 (d, h), b1 (h,), W2 (h, C), b2 (C,)

The loss is mean cross-entropy plus ``0.5 * l2 * ||weights||^2`` (biases are
not regularized).

Logistic-regression products are accumulated one feature (or one sample)
at a time in a fixed order, see :func:`ordered_affine`. That makes a
column-split computation, as done by the vertical protocol, reproduce the
centralized result bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from fedsim.data import Dataset
from fedsim.errors import DimensionMismatchError, EmptyClientDataError, InvalidSpecError
from fedsim.rng import Rng

KINDS = ("logistic_regression", "mlp")
ACTIVATIONS = ("tanh", "relu")


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n_features: int
    n_classes: int
    hidden_dim: int | None = None
    activation: str = "tanh"
    l2: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpecError(f"model kind must be one of {KINDS}, got {self.kind!r}")
        if self.n_features < 1 or self.n_classes < 1:
            raise InvalidSpecError("n_features and n_classes must be positive")
        if self.kind == "mlp":
            if self.hidden_dim is None or self.hidden_dim < 1:
                raise InvalidSpecError("mlp needs a positive hidden_dim")
            if self.activation not in ACTIVATIONS:
                raise InvalidSpecError(f"activation must be one of {ACTIVATIONS}")
        if not np.isfinite(self.l2) or self.l2 < 0:
            raise InvalidSpecError("l2 must be finite and non-negative")

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        d, C = self.n_features, self.n_classes
        if self.kind == "logistic_regression":
            return [("W", (d, C)), ("b", (C,))]
        h = self.hidden_dim
        return [("W1", (d, h)), ("b1", (h,)), ("W2", (h, C)), ("b2", (C,))]

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(shape)) for _, shape in self.layout())

    @property
    def split_index(self) -> int:
        """Length of the input-side block (W1, b1) of an MLP parameter vector."""
        if self.kind != "mlp":
            raise InvalidSpecError("only an mlp can be split")
        return (self.n_features + 1) * self.hidden_dim

    def unpack(self, params: np.ndarray) -> dict[str, np.ndarray]:
        """Named views into ``params``."""
        params = np.asarray(params, dtype=np.float64)
        if params.shape != (self.n_params,):
            raise DimensionMismatchError(f"expected {self.n_params} parameters, got shape {params.shape}")
        out, pos = {}, 0
        for name, shape in self.layout():
            size = int(np.prod(shape))
            out[name] = params[pos : pos + size].reshape(shape)
            pos += size
        return out

    def to_json(self) -> str:
        return json.dumps({k: v for k, v in asdict(self).items() if v is not None}, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**d)


def init_params(spec: ModelSpec, seed: int = 0) -> np.ndarray:
    """Zeros for logistic regression; Glorot-uniform weights and zero biases for the MLP."""
    if spec.kind == "logistic_regression":
        return np.zeros(spec.n_params)
    rng = Rng(seed, "init_params")
    parts = []
    for name, shape in spec.layout():
        if name.startswith("W"):
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            parts.append(rng.uniform(-bound, bound, shape).ravel())
        else:
            parts.append(np.zeros(shape))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# building blocks (shared with the split and vertical protocols)
# ---------------------------------------------------------------------------


def ordered_affine(X: np.ndarray, W: np.ndarray, b: np.ndarray | None = None, acc: np.ndarray | None = None):
    """``acc + X @ W (+ b)`` summed feature by feature in column order, starting from zeros."""
    out = np.zeros((X.shape[0], W.shape[1])) if acc is None else np.array(acc, dtype=np.float64)
    for j in range(X.shape[1]):
        out += X[:, j, None] * W[j]
    if b is not None:
        out += b
    return out


def ordered_xt_dot(X: np.ndarray, R: np.ndarray) -> np.ndarray:
    """``X.T @ R`` summed sample by sample in row order."""
    out = np.zeros((X.shape[1], R.shape[1]))
    for i in range(X.shape[0]):
        out += X[i][:, None] * R[i]
    return out


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy_residual(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits, ``(softmax - onehot) / batch``."""
    n = logits.shape[0]
    rows = np.arange(n)
    loss = float(-log_softmax(logits)[rows, labels].mean())
    residual = softmax(logits)
    residual[rows, labels] -= 1.0
    residual /= n
    return loss, residual


def activate(spec: ModelSpec, Z: np.ndarray) -> np.ndarray:
    return np.tanh(Z) if spec.activation == "tanh" else np.maximum(Z, 0.0)


def mlp_hidden(spec: ModelSpec, W1, b1, X) -> tuple[np.ndarray, np.ndarray]:
    """Pre-activations and activations of the hidden layer."""
    Z = X @ W1 + b1
    return Z, activate(spec, Z)


def mlp_head_backward(spec: ModelSpec, W2, A, residual):
    """Output-layer gradients and the gradient flowing back into the activations."""
    gW2 = A.T @ residual + spec.l2 * W2
    gb2 = residual.sum(axis=0)
    dA = residual @ W2.T
    return gW2, gb2, dA


def mlp_hidden_backward(spec: ModelSpec, W1, X, Z, A, dA):
    if spec.activation == "tanh":
        dZ = dA * (1.0 - A * A)
    else:
        dZ = dA * (Z > 0)
    gW1 = X.T @ dZ + spec.l2 * W1
    gb1 = dZ.sum(axis=0)
    return gW1, gb1


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _check_features(spec: ModelSpec, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != spec.n_features:
        raise DimensionMismatchError(f"expected (n, {spec.n_features}) features, got {X.shape}")
    return X


def logits(spec: ModelSpec, params: np.ndarray, X: np.ndarray) -> np.ndarray:
    X = _check_features(spec, X)
    p = spec.unpack(params)
    if spec.kind == "logistic_regression":
        return ordered_affine(X, p["W"], p["b"])
    _, A = mlp_hidden(spec, p["W1"], p["b1"], X)
    return A @ p["W2"] + p["b2"]


def forward(spec: ModelSpec, params: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Class probabilities, one row per sample."""
    return softmax(logits(spec, params, X))


def weight_penalty(spec: ModelSpec, params: np.ndarray) -> float:
    p = spec.unpack(params)
    return 0.5 * spec.l2 * sum(float(np.sum(p[k] ** 2)) for k in p if k.startswith("W"))


def _loss_grad(spec: ModelSpec, params: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    p = spec.unpack(params)
    if spec.kind == "logistic_regression":
        loss, R = cross_entropy_residual(ordered_affine(X, p["W"], p["b"]), y)
        gW = ordered_xt_dot(X, R) + spec.l2 * p["W"]
        gb = R.sum(axis=0)
        grads = (gW, gb)
    else:
        Z, A = mlp_hidden(spec, p["W1"], p["b1"], X)
        loss, R = cross_entropy_residual(A @ p["W2"] + p["b2"], y)
        gW2, gb2, dA = mlp_head_backward(spec, p["W2"], A, R)
        gW1, gb1 = mlp_hidden_backward(spec, p["W1"], X, Z, A, dA)
        grads = (gW1, gb1, gW2, gb2)
    if spec.l2:
        loss += weight_penalty(spec, params)
    return loss, np.concatenate([g.ravel() for g in grads])


def loss_and_gradient(spec: ModelSpec, params: np.ndarray, batch: Dataset) -> tuple[float, np.ndarray]:
    """Mean cross-entropy (+ L2 on weights) over ``batch`` and its gradient, same layout as ``params``."""
    X = _check_features(spec, batch.features)
    if batch.n_classes > spec.n_classes:
        raise DimensionMismatchError(f"batch has {batch.n_classes} classes, model {spec.n_classes}")
    return _loss_grad(spec, np.asarray(params, dtype=np.float64), X, batch.labels)


def batches(indices: np.ndarray, batch_size: int, rng: Rng):
    """Shuffle ``indices`` with ``rng`` and yield consecutive batches (last may be short)."""
    order = indices[rng.permutation(len(indices))]
    for start in range(0, len(order), batch_size):
        yield order[start : start + batch_size]


def train_epochs(
    spec: ModelSpec,
    params: np.ndarray,
    dataset: Dataset,
    indices,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
) -> tuple[np.ndarray, float]:
    """Plain minibatch SGD; returns the new parameters and the mean batch loss seen."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EmptyClientDataError("no training samples")
    if epochs < 1 or batch_size < 1 or not lr >= 0:
        raise ValueError("need epochs >= 1, batch_size >= 1 and lr >= 0")
    X_all = _check_features(spec, dataset.features)
    y_all = dataset.labels
    params = np.array(params, dtype=np.float64)
    rng = Rng(seed, "batches")
    losses = []
    for _ in range(epochs):
        for idx in batches(indices, batch_size, rng):
            loss, grad = _loss_grad(spec, params, X_all[idx], y_all[idx])
            params = params - lr * grad
            losses.append(loss)
    return params, float(np.mean(losses))


def local_train(spec, params, dataset, indices, epochs, batch_size, lr, seed) -> np.ndarray:
    """SGD on ``dataset[indices]``: each epoch reshuffles (seeded) and steps through batches."""
    return train_epochs(spec, params, dataset, indices, epochs, batch_size, lr, seed)[0]


def evaluate(spec: ModelSpec, params: np.ndarray, dataset: Dataset) -> tuple[float, float]:
    """Mean cross-entropy (no regularizer) and accuracy; argmax ties go to the lowest class."""
    z = logits(spec, params, dataset.features)
    y = dataset.labels
    loss = float(-log_softmax(z)[np.arange(len(y)), y].mean())
    acc = float(np.mean(np.argmax(z, axis=1) == y))
    return loss, acc


def gradient_check(
    spec: ModelSpec,
    params: np.ndarray,
    batch: Dataset,
    h: float = 1e-5,
    grad_fn=None,
) -> tuple[float, int]:
    """Compare the analytic gradient with central finite differences.

    Returns ``(max_rel_err, worst_index)``. Each coordinate's error is
    ``|g_i - fd_i|`` relative to the gradient's scale ``max(max|g|, max|fd|)``;
    dividing by the coordinate's own magnitude would let finite-difference
    round-off (~1e-11) dominate on near-zero entries. ``grad_fn`` substitutes
    the analytic gradient (used to inject faults in tests).
    """
    params = np.asarray(params, dtype=np.float64)
    grad = (grad_fn or (lambda p: loss_and_gradient(spec, p, batch)[1]))(params)
    fd = np.empty_like(params)
    for i in range(params.size):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        fd[i] = (loss_and_gradient(spec, up, batch)[0] - loss_and_gradient(spec, down, batch)[0]) / (2 * h)
    scale = max(float(np.abs(grad).max()), float(np.abs(fd).max()), 1e-300)
    err = np.abs(grad - fd) / scale
    worst = int(np.argmax(err))
    return float(err[worst]), worst
