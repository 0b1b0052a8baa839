"""Reference models: linear/logistic regression and a full-complexity MLP.

The linear model is the fully restricted additive model (every shape
function is a line through the origin of the standardized feature); the MLP
is the unrestricted end of the spectrum, free to model feature interactions
that no additive model can represent.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, NumericError, UsageError
from .feature_net import DenseLayer
from .model import LINKS, LossBreakdown, _task_loss_and_grad
from .tensor import Activation, init_dense, make_rng, sigmoid
from .data import train_val_split
from .training import train

__all__ = ["LinearModel", "fit_linear", "MlpModel", "build_mlp", "fit_full_dnn"]


class LinearModel:
    """w . x + b with a link; a GAM whose shape functions are lines."""

    def __init__(self, weights, bias, link, feature_names=None):
        if link not in LINKS:
            raise UsageError(f"link must be one of {LINKS}")
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(float(bias))
        self.link = link
        self.feature_names = list(feature_names) if feature_names else [
            f"x{k}" for k in range(self.weights.size)
        ]

    @property
    def n_features(self):
        return self.weights.size

    def predict_logits(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionError(
                f"expected X of shape (B, {self.n_features}), got {X.shape}"
            )
        return X @ self.weights + self.bias

    def predict(self, X):
        logits = self.predict_logits(X)
        return sigmoid(logits) if self.link == "logistic" else logits


def fit_linear(ds, cfg):
    """Full-batch gradient descent on the task loss plus lambda2 ||w||^2.

    Uses cfg.lr, lr_decay, and max_epochs (as step count); dropout and the
    output penalty do not apply to a linear model. Returns (model, losses).
    """
    X = np.asarray(ds.features, dtype=np.float64)
    y = np.asarray(ds.targets, dtype=np.float64)
    if X.shape[0] == 0:
        raise UsageError("cannot fit on an empty dataset")
    if y.ndim != 1:
        raise UsageError("fit_linear expects a single target column")
    link = ds.link
    w = np.zeros(X.shape[1])
    b = 0.0
    lam2 = cfg.weight_decay
    losses = []
    for step in range(cfg.max_epochs):
        logits = X @ w + b
        task, d_logit = _task_loss_and_grad(link, logits, y)
        loss = task + lam2 * float(w @ w)
        if not np.isfinite(loss):
            raise NumericError(
                f"linear fit diverged at step {step} (loss {loss!r}); "
                f"reduce lr (currently {cfg.lr})"
            )
        losses.append(loss)
        lr_t = cfg.lr * cfg.lr_decay ** step
        w -= lr_t * (X.T @ d_logit + 2.0 * lam2 * w)
        b -= lr_t * float(d_logit.sum())
    return LinearModel(w, b, link, ds.feature_names), losses


class MlpModel:
    """Plain fully connected ReLU network over all features jointly."""

    def __init__(self, layers, link, dropout=0.0):
        if link not in LINKS:
            raise UsageError(f"link must be one of {LINKS}")
        self.layers = list(layers)
        self.link = link
        self.dropout = dropout

    @property
    def n_features(self):
        return self.layers[0].weights.shape[0]

    def param_arrays(self):
        return [a for layer in self.layers for _, a in layer.params()]

    def decay_flags(self):
        flags = []
        for layer in self.layers:
            decayed = layer.decayed()
            for _, arr in layer.params():
                flags.append(any(arr is d for d in decayed))
        return flags

    def snapshot(self):
        return [a.copy() for a in self.param_arrays()]

    def restore(self, snap):
        for a, saved in zip(self.param_arrays(), snap):
            a[...] = saved

    def forward(self, X, train_mode=False, rng=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionError(
                f"expected X of shape (B, {self.n_features}), got {X.shape}"
            )
        h = X
        caches, masks = [], []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(h)
            caches.append(cache)
            if train_mode and i < last and self.dropout > 0.0:
                if rng is None:
                    raise UsageError("dropout needs an rng in train mode")
                keep = rng.random(h.shape) >= self.dropout
                mask = keep / (1.0 - self.dropout)
                h = h * mask
                masks.append(mask)
            else:
                masks.append(None)
        ctx = {"caches": caches, "masks": masks} if train_mode else None
        return h, ctx

    def predict_logits(self, X):
        out, _ = self.forward(X)
        return out[:, 0]

    def predict(self, X):
        logits = self.predict_logits(X)
        return sigmoid(logits) if self.link == "logistic" else logits

    def backward(self, ctx, grad_out):
        if ctx is None:
            raise UsageError("backward needs the ctx of a train-mode forward")
        grads = [None] * (2 * len(self.layers))
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            if ctx["masks"][i] is not None:
                g = g * ctx["masks"][i]
            layer_grads, g = self.layers[i].backward(ctx["caches"][i], g)
            grads[2 * i], grads[2 * i + 1] = layer_grads
        return grads

    def loss_and_grads(self, X, y, cfg, rng):
        """Task loss + lambda2 * sum ||W_l||^2 (no averaging; single net).

        The output penalty and feature dropout are additive-model concepts
        and do not apply here.
        """
        out, ctx = self.forward(X, train_mode=True, rng=rng)
        logits = out[:, 0]
        task, d_logit = _task_loss_and_grad(self.link, logits, np.asarray(y))
        lam2 = cfg.weight_decay
        decay = sum(float((w * w).sum())
                    for layer in self.layers for w in layer.decayed())
        bd = LossBreakdown(task, 0.0, decay, task + lam2 * decay)
        grads = self.backward(ctx, d_logit[:, None])
        if lam2 != 0.0:
            for i, layer in enumerate(self.layers):
                grads[2 * i] += lam2 * 2.0 * layer.weights
        return bd, grads

    def eval_task_loss(self, X, y):
        logits = self.predict_logits(X)
        task, _ = _task_loss_and_grad(self.link, logits, np.asarray(y))
        return task

    def center_on(self, X_train):
        return self  # nothing to center in a joint model


def build_mlp(n_features, link, rng, hidden=(100,) * 10, dropout=0.0):
    """K -> hidden... -> 1 ReLU stack with a linear output layer."""
    dims = [n_features, *hidden, 1]
    layers = []
    for i in range(len(dims) - 1):
        act = Activation("identity") if i == len(dims) - 2 else Activation("relu")
        layers.append(DenseLayer(
            init_dense(rng, dims[i], dims[i + 1]), np.zeros(dims[i + 1]), act,
        ))
    return MlpModel(layers, link, dropout)


def fit_full_dnn(ds, cfg, hidden=(100,) * 10):
    """Train the full-complexity MLP with the shared trainer contract.

    Splits off 1/8 of the rows for early-stopping validation using
    cfg.seed. Returns (model, TrainReport).
    """
    rng = make_rng(cfg.seed)
    tr, va = train_val_split(ds, rng)
    model = build_mlp(ds.n_features, ds.link, rng, hidden, dropout=cfg.dropout)
    return train(model, tr, va, cfg)
