"""From-scratch classifiers trained by full-batch gradient descent.

Linear models (logistic regression and linear SVM) are trained by one batched
routine that can fit many independent models at once; the GA fitness wrapper
relies on that to score a whole generation of feature subsets in one pass.
The neural network has one sigmoid hidden layer and sigmoid outputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from emopair.dataset import DataError, Scaler

SCHEMA_VERSION = 1


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    max_epochs: int = 2000
    tolerance: float = 1e-6
    l2: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.l2 < 0 or self.tolerance < 0:
            raise ValueError("l2 and tolerance must be >= 0")


def sigmoid(z):
    # Split by sign so neither branch overflows.
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(Z):
    Z = Z - Z.max(axis=-1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# Linear objectives, batched over a leading model axis

LINEAR_OBJECTIVES = ("logistic", "softmax", "hinge")


def linear_targets(objective, y, n_classes):
    """Target array ``(..., n, K)`` for integer labels ``y`` of shape ``(..., n)``."""
    y = np.asarray(y, dtype=np.int64)
    if objective == "logistic":
        return (y == 1).astype(np.float64)[..., None]
    onehot = (y[..., None] == np.arange(n_classes)).astype(np.float64)
    if objective == "softmax":
        return onehot
    if objective == "hinge":
        if n_classes == 2:
            return np.where(y == 1, 1.0, -1.0)[..., None]
        return 2.0 * onehot - 1.0
    raise ValueError(f"unknown objective {objective!r}")


def _lastmax(Z):
    # Elementwise max over slices; numpy's axis reduction is slow for short last axes.
    out = Z[..., 0].copy()
    for k in range(1, Z.shape[-1]):
        np.maximum(out, Z[..., k], out=out)
    return out[..., None]


def _lastsum(Z):
    return Z @ np.ones((Z.shape[-1], 1))


def data_loss(objective, Z, T):
    """Mean data loss per model. ``Z``: (B, n, K); ``T``: (n, K) or (B, n, K)."""
    if objective == "logistic":
        return np.mean(np.logaddexp(0.0, Z[..., 0]) - T[..., 0] * Z[..., 0], axis=-1)
    if objective == "softmax":
        zmax = Z.max(axis=-1, keepdims=True)
        lse = zmax[..., 0] + np.log(np.exp(Z - zmax).sum(axis=-1))
        return np.mean(lse - (T * Z).sum(axis=-1), axis=-1)
    margins = T * Z
    return np.maximum(0.0, 1.0 - margins).sum(axis=-1).mean(axis=-1)


def _residual(objective, Z, T):
    """d(mean data loss)/dZ times n."""
    if objective == "logistic":
        return sigmoid(Z) - T
    if objective == "softmax":
        return _softmax(Z) - T
    return -T * (T * Z < 1.0)


def linear_loss_grad(objective, W, c, X, T, l2):
    """Regularized loss and (sub)gradient for a batch of linear models.

    Shapes: ``W`` (B, d, K), ``c`` (B, K), ``X`` (B, n, d), ``T`` (n, K) or
    (B, n, K).
    Returns ``(loss (B,), gW, gc)``.
    """
    n = X.shape[1]
    Z = X @ W + c[:, None, :]
    if objective == "logistic":
        # One exp serves both softplus and sigmoid.
        e = np.exp(-np.abs(Z))
        data = np.mean(np.maximum(Z, 0.0) + np.log1p(e) - T * Z, axis=(1, 2))
        R = np.where(Z >= 0, 1.0, e) / (1.0 + e) - T
    elif objective == "softmax":
        Zs = Z - _lastmax(Z)
        E = np.exp(Zs)
        S = _lastsum(E)
        data = np.mean(np.log(S[..., 0]) - _lastsum(T * Zs)[..., 0], axis=-1)
        R = E / S - T
    else:
        data = data_loss(objective, Z, T)
        R = _residual(objective, Z, T)
    loss = data + 0.5 * l2 * np.einsum("bdk,bdk->b", W, W)
    R /= n
    gW = np.swapaxes(X, 1, 2) @ R + l2 * W
    gc = np.ones(n) @ R
    return loss, gW, gc


def fit_linear_batch(objective, X, y, n_classes, config):
    """Fit ``B`` independent linear models on ``X`` of shape (B, n, d).

    ``y`` holds integer labels, shared ``(n,)`` or per model ``(B, n)``.

    Full-batch gradient descent from zero weights. A step that raises a
    model's loss is rejected and that model's step size halved, so every
    model's loss sequence is non-increasing. A model stops once its accepted
    loss decrease falls below ``config.tolerance``.
    """
    X = np.asarray(X, dtype=np.float64)
    B, n, d = X.shape
    T = linear_targets(objective, y, n_classes)
    per_model = T.ndim == 3
    K = T.shape[-1]
    W = np.zeros((B, d, K))
    c = np.zeros((B, K))
    lr = np.full(B, float(config.learning_rate))
    min_lr = config.learning_rate * 2.0 ** -40
    l2 = config.l2

    loss, gW, gc = linear_loss_grad(objective, W, c, X, T, l2)
    active = np.arange(B)
    Xa, Ta = X, T
    for epoch in range(1, config.max_epochs + 1):
        step = lr[active][:, None]
        W_new = W[active] - step[:, :, None] * gW[active]
        c_new = c[active] - step * gc[active]
        loss_new, gW_new, gc_new = linear_loss_grad(objective, W_new, c_new, Xa, Ta, l2)
        if not np.all(np.isfinite(loss_new)):
            raise TrainingError(f"{objective} training diverged at epoch {epoch}")
        old = loss[active]
        accept = loss_new <= old + 1e-12 * np.abs(old)
        acc_idx = active[accept]
        W[acc_idx] = W_new[accept]
        c[acc_idx] = c_new[accept]
        gW[acc_idx] = gW_new[accept]
        gc[acc_idx] = gc_new[accept]
        loss[acc_idx] = loss_new[accept]
        rej_idx = active[~accept]
        lr[rej_idx] *= 0.5
        done = np.zeros(active.shape[0], dtype=bool)
        done[accept] = (old[accept] - loss_new[accept]) < config.tolerance
        done[~accept] = lr[rej_idx] < min_lr
        if done.any():
            active = active[~done]
            if active.size == 0:
                break
            Xa = X[active]
            Ta = T[active] if per_model else T
    return W, c


def linear_scores_batch(W, c, X):
    return X @ W + c[:, None, :]


# ---------------------------------------------------------------------------
# Linear models


@dataclass(frozen=True)
class LinearModel:
    """Trained linear classifier.

    ``mode`` is ``binary`` (one weight column, positive class = class_order[1]),
    ``softmax`` or ``ovr`` (one column per class).
    """

    kind: str  # "lr" or "svm"
    mode: str
    class_order: tuple
    weights: np.ndarray  # (d, K)
    bias: np.ndarray  # (K,)

    @property
    def input_dim(self):
        return self.weights.shape[0]

    def decision(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise DataError(f"model expects {self.input_dim} features, got {X.shape[1]}")
        return X @ self.weights + self.bias

    def scores(self, X):
        Z = self.decision(X)
        if self.mode == "binary":
            if self.kind == "lr":
                p = sigmoid(Z[:, 0])
                return np.stack([1.0 - p, p], axis=1)
            return np.concatenate([-Z, Z], axis=1)
        if self.mode == "softmax":
            return _softmax(Z)
        return Z


def _labels_and_check(data):
    if data.labels is None:
        raise DataError("training data has no labels")
    y = data.label_indices
    counts = np.bincount(y, minlength=len(data.universe))
    if np.any(counts == 0):
        missing = [data.universe.labels[i] for i in np.flatnonzero(counts == 0)]
        raise TrainingError(f"no training examples for class(es) {missing}")
    return y


def _train_linear(kind, data, config):
    y = _labels_and_check(data)
    M = len(data.universe)
    if kind == "lr":
        objective, mode = ("logistic", "binary") if M == 2 else ("softmax", "softmax")
    else:
        objective, mode = "hinge", ("binary" if M == 2 else "ovr")
    W, c = fit_linear_batch(objective, data.features[None], y, M, config)
    return LinearModel(kind, mode, data.universe.labels, W[0], c[0])


def train_logistic(data, config=TrainConfig()):
    """Binary (sigmoid) or multiclass (softmax) logistic regression."""
    return _train_linear("lr", data, config)


def train_svm(data, config=TrainConfig()):
    """Linear SVM on the L2-regularized hinge loss; one-vs-rest for M > 2."""
    return _train_linear("svm", data, config)


# ---------------------------------------------------------------------------
# Neural network


@dataclass(frozen=True)
class NnModel:
    class_order: tuple
    W1: np.ndarray  # (input_dim, hidden_dim)
    b1: np.ndarray
    W2: np.ndarray  # (hidden_dim, output_dim)
    b2: np.ndarray

    @property
    def input_dim(self):
        return self.W1.shape[0]

    @property
    def hidden_dim(self):
        return self.W1.shape[1]

    @property
    def output_dim(self):
        return self.W2.shape[1]

    def hidden(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.input_dim:
            raise DataError(f"network expects {self.input_dim} inputs, got {X.shape[1]}")
        return sigmoid(X @ self.W1 + self.b1)

    def scores(self, X):
        out = sigmoid(self.hidden(X) @ self.W2 + self.b2)
        if self.output_dim == 1:
            return np.concatenate([1.0 - out, out], axis=1)
        return out


def nn_targets(y, output_dim):
    y = np.asarray(y, dtype=np.int64)
    if output_dim == 1:
        return (y == 1).astype(np.float64)[:, None]
    T = np.zeros((y.shape[0], output_dim))
    T[np.arange(y.shape[0]), y] = 1.0
    return T


def nn_loss_grad(params, X, T, l2):
    """Cross-entropy of sigmoid outputs against ``T`` plus L2; returns ``(loss, grads)``.

    ``params`` and ``grads`` are ``(W1, b1, W2, b2)`` tuples.
    """
    W1, b1, W2, b2 = params
    n = X.shape[0]
    H = sigmoid(X @ W1 + b1)
    A = H @ W2 + b2
    # log(1 + e^A) - t*A is the cross-entropy of sigmoid(A) against t.
    loss = np.sum(np.logaddexp(0.0, A) - T * A) / n
    loss += 0.5 * l2 * (np.sum(W1 * W1) + np.sum(W2 * W2))
    dA = (sigmoid(A) - T) / n
    gW2 = H.T @ dA + l2 * W2
    gb2 = dA.sum(axis=0)
    dZ1 = (dA @ W2.T) * H * (1.0 - H)
    gW1 = X.T @ dZ1 + l2 * W1
    gb1 = dZ1.sum(axis=0)
    return loss, (gW1, gb1, gW2, gb2)


def init_nn_params(dims, rng):
    n_in, n_hid, n_out = dims
    r1 = np.sqrt(6.0 / (n_in + n_hid))
    r2 = np.sqrt(6.0 / (n_hid + n_out))
    return (
        rng.uniform(-r1, r1, size=(n_in, n_hid)),
        np.zeros(n_hid),
        rng.uniform(-r2, r2, size=(n_hid, n_out)),
        np.zeros(n_out),
    )


def train_nn(data, config=TrainConfig(), dims=None):
    """Train a one-hidden-layer sigmoid network by full-batch gradient descent.

    ``dims`` defaults to ``(n_features, 50, M)``.
    """
    y = _labels_and_check(data)
    M = len(data.universe)
    if dims is None:
        dims = (data.n_features, 50, M)
    n_in, n_hid, n_out = dims
    if n_in != data.n_features:
        raise DataError(f"input_dim {n_in} does not match {data.n_features} features")
    if n_out not in (1, M) and not (M == 2 and n_out == 2):
        raise DataError(f"output_dim {n_out} incompatible with {M} classes")
    if n_out == 1 and M != 2:
        raise DataError("a single output unit needs exactly 2 classes")
    rng = np.random.default_rng(config.seed)
    params = init_nn_params(dims, rng)
    X = data.features
    T = nn_targets(y, n_out)
    lr = config.learning_rate
    loss, grads = nn_loss_grad(params, X, T, config.l2)
    for epoch in range(1, config.max_epochs + 1):
        params = tuple(p - lr * g for p, g in zip(params, grads))
        new_loss, grads = nn_loss_grad(params, X, T, config.l2)
        if not np.isfinite(new_loss):
            raise TrainingError(f"network training diverged at epoch {epoch}")
        improvement = loss - new_loss
        loss = new_loss
        if improvement < config.tolerance:
            break
    return NnModel(data.universe.labels, *params)


def hidden_transform(model, features):
    """Hidden-layer activations: the network's learned feature space."""
    x = np.asarray(features, dtype=np.float64)
    H = model.hidden(x)
    return H[0] if x.ndim == 1 else H


# ---------------------------------------------------------------------------
# Prediction


def predict_batch(model, X):
    """Labels and score matrix for rows of ``X``; ties go to the lowest class index."""
    S = model.scores(X)
    idx = np.argmax(S, axis=1)  # argmax returns the first maximum
    return [model.class_order[i] for i in idx], S


def predict(model, features):
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 1:
        raise DataError("predict takes a single feature vector; use predict_batch")
    labels, S = predict_batch(model, x[None, :])
    return labels[0], S[0]


def train_classifier(kind, data, config=TrainConfig(), hidden_dim=50):
    if kind == "lr":
        return train_logistic(data, config)
    if kind == "svm":
        return train_svm(data, config)
    if kind == "nn":
        return train_nn(data, config, (data.n_features, hidden_dim, len(data.universe)))
    raise ValueError(f"unknown classifier kind {kind!r}")


# ---------------------------------------------------------------------------
# Persistence


def model_to_json(model, scaler: Optional[Scaler] = None, subspace=None):
    doc = {"schema_version": SCHEMA_VERSION, "class_order": list(model.class_order)}
    if isinstance(model, LinearModel):
        doc.update(
            kind=model.kind,
            mode=model.mode,
            dims=[model.input_dim, model.weights.shape[1]],
            weights=model.weights.tolist(),
            bias=model.bias.tolist(),
        )
    else:
        doc.update(
            kind="nn",
            dims=[model.input_dim, model.hidden_dim, model.output_dim],
            weights={
                "W1": model.W1.tolist(),
                "b1": model.b1.tolist(),
                "W2": model.W2.tolist(),
                "b2": model.b2.tolist(),
            },
        )
    doc["scaler"] = None if scaler is None else scaler.to_json()
    doc["subspace"] = None if subspace is None else [int(i) for i in subspace]
    return doc


def model_from_json(doc):
    """Inverse of :func:`model_to_json`; returns ``(model, scaler, subspace)``."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported model schema_version {doc.get('schema_version')}")
    order = tuple(doc["class_order"])
    arr = lambda v: np.array(v, dtype=np.float64)
    if doc["kind"] == "nn":
        w = doc["weights"]
        d_in, d_hid, d_out = doc["dims"]
        model = NnModel(
            order,
            arr(w["W1"]).reshape(d_in, d_hid),
            arr(w["b1"]),
            arr(w["W2"]).reshape(d_hid, d_out),
            arr(w["b2"]),
        )
    else:
        d, k = doc["dims"]
        model = LinearModel(doc["kind"], doc["mode"], order, arr(doc["weights"]).reshape(d, k), arr(doc["bias"]))
    scaler = None if doc.get("scaler") is None else Scaler.from_json(doc["scaler"])
    return model, scaler, doc.get("subspace")


def save_model(path, model, scaler=None, subspace=None):
    Path(path).write_text(json.dumps(model_to_json(model, scaler, subspace)) + "\n", encoding="utf-8")


def load_model(path):
    return model_from_json(json.loads(Path(path).read_text(encoding="utf-8")))
