"""Single-task neural additive model.

A model is K univariate feature nets plus one global bias. The prediction
logit is ``bias + sum_k (f_k(x_k) - c_k)``; a link turns the logit into a
probability (logistic) or leaves it as-is (identity, regression).

The centering offsets c_k start at zero and are set after training by
:func:`center`, which shifts every shape function to mean zero over the
training data and absorbs the total shift into the bias. Centered shape
functions are identifiable, comparable across features, and can be removed
(:func:`zero_out_feature`) without biasing average predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, DimensionError, UsageError
from .feature_net import FeatureNet, FeatureNetConfig, build_feature_net
from .tensor import sigmoid

__all__ = [
    "LINKS",
    "FeatureMeta",
    "LossBreakdown",
    "NamModel",
    "build_nam",
    "nam_forward",
    "nam_loss",
    "nam_backward",
    "center",
    "zero_out_feature",
    "shape_table",
    "feature_contributions",
    "NamEnsemble",
    "ensemble_predict",
]

LINKS = ("identity", "logistic")

# probability clamp applied inside the log only; gradients use the raw p
PROB_EPS = 1e-7


@dataclass
class FeatureMeta:
    """Name and training range of one feature, plus the original-units
    transform (original = value * scale + mean) kept for plot axes."""

    name: str
    vmin: float
    vmax: float
    mean: float = 0.0
    scale: float = 1.0

    def to_original(self, values):
        return np.asarray(values) * self.scale + self.mean


@dataclass
class LossBreakdown:
    task_loss: float
    output_penalty: float
    weight_decay: float
    total: float


class NamModel:
    """K feature nets, a global bias and a link."""

    def __init__(self, nets, link, feature_meta, bias=0.0):
        if link not in LINKS:
            raise ConfigError(f"link must be one of {LINKS}, got {link!r}")
        if len(nets) != len(feature_meta):
            raise ConfigError("one FeatureMeta per net is required")
        self.nets: list[FeatureNet] = list(nets)
        self.link = link
        self.feature_meta = list(feature_meta)
        self.bias = np.asarray(float(bias))
        self.offsets = np.zeros(len(nets))
        self.zeroed = np.zeros(len(nets), dtype=bool)
        self.centered = False
        self.train_contrib_means = None

    @property
    def n_features(self):
        return len(self.nets)

    def param_arrays(self):
        arrs = [a for net in self.nets for a in net.params()]
        arrs.append(self.bias)
        return arrs

    def decay_flags(self):
        flags = []
        for net in self.nets:
            decayed = net.decayed_params()
            for arr in net.params():
                flags.append(any(arr is d for d in decayed))
        flags.append(False)
        return flags

    def snapshot(self):
        return [a.copy() for a in self.param_arrays()]

    def restore(self, snap):
        for a, saved in zip(self.param_arrays(), snap):
            a[...] = saved

    def forward(self, X, train_mode=False, rng=None, feature_dropout=0.0):
        return nam_forward(self, X, train_mode, rng, feature_dropout)

    def predict_logits(self, X):
        _, logits, _ = nam_forward(self, X)
        return logits

    def predict(self, X):
        logits = self.predict_logits(X)
        return sigmoid(logits) if self.link == "logistic" else logits

    def loss_and_grads(self, X, y, cfg, rng):
        """Train-mode loss plus gradients aligned with :meth:`param_arrays`."""
        bd, ctx = nam_loss(
            self, X, y,
            output_penalty=cfg.output_penalty, weight_decay=cfg.weight_decay,
            train_mode=True, rng=rng, feature_dropout=cfg.feature_dropout,
        )
        return bd, nam_backward(self, ctx)

    def eval_task_loss(self, X, y):
        bd, _ = nam_loss(self, X, y, 0.0, 0.0, train_mode=False, rng=None)
        return bd.task_loss

    def center_on(self, X_train):
        return center(self, X_train)


def build_nam(n_features, cfg, feature_meta, link, rng):
    """Build an uncentered model with freshly initialized nets."""
    if len(feature_meta) != n_features:
        raise ConfigError("feature_meta length must equal n_features")
    nets = [
        build_feature_net(cfg, (m.vmin, m.vmax), rng, feature_index=k)
        for k, m in enumerate(feature_meta)
    ]
    return NamModel(nets, link, feature_meta)


def nam_forward(model, X, train_mode=False, rng=None, feature_dropout=0.0):
    """Per-feature contributions, logits, and train-mode caches.

    contribs[b, k] = f_k(X[b, k]) - c_k, zero for zeroed-out features. With
    feature dropout, whole contributions are dropped per example and the
    survivors rescaled by 1/(1 - rate), so the expected logit is unchanged.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise DimensionError(
            f"expected X of shape (B, {model.n_features}), got {X.shape}"
        )
    B, K = X.shape
    contribs = np.zeros((B, K))
    caches = [None] * K
    for k, net in enumerate(model.nets):
        if model.zeroed[k]:
            continue
        out, cache = net.forward(X[:, k], train_mode=train_mode, rng=rng)
        contribs[:, k] = out[:, 0] - model.offsets[k]
        caches[k] = cache

    fmask = None
    if train_mode and feature_dropout > 0.0:
        if rng is None:
            raise UsageError("feature dropout needs an rng")
        keep = rng.random((B, K)) >= feature_dropout
        fmask = keep / (1.0 - feature_dropout)
        contribs = contribs * fmask

    logits = model.bias + contribs.sum(axis=1)
    ctx = None
    if train_mode:
        ctx = {"caches": caches, "fmask": fmask, "contribs": contribs}
    return contribs, logits, ctx


def _task_loss_and_grad(link, logits, y):
    B = logits.shape[0]
    y = np.asarray(y, dtype=np.float64)
    if y.shape != logits.shape:
        raise DimensionError(f"targets of shape {y.shape} vs logits {logits.shape}")
    if np.any(np.isnan(y)):
        raise DataError("NaN target")
    if link == "logistic":
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DataError("logistic targets must be 0 or 1")
        p = sigmoid(logits)
        pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
        loss = float(np.mean(-y * np.log(pc) - (1.0 - y) * np.log1p(-pc)))
        d_logit = (p - y) / B
    else:
        r = logits - y
        loss = float(np.mean(r * r))
        d_logit = 2.0 * r / B
    return loss, d_logit


def nam_loss(model, X, y, output_penalty, weight_decay, train_mode, rng,
             feature_dropout=0.0):
    """Task loss plus the two additive-model penalties.

    total = task + lambda1 * mean_b[(1/K) sum_k contrib^2]
                 + lambda2 * (1/K) sum_k ||weights of net k||^2

    Returns (LossBreakdown, ctx); feed ctx to :func:`nam_backward` for
    parameter gradients. ctx carries d(total)/d(logit) and d(total)/d(contrib).
    """
    contribs, logits, fwd_ctx = nam_forward(
        model, X, train_mode=train_mode, rng=rng, feature_dropout=feature_dropout
    )
    B, K = contribs.shape
    if B == 0:
        raise UsageError("loss of an empty batch is undefined")
    task, d_logit = _task_loss_and_grad(model.link, logits, y)

    penalty = float((contribs * contribs).sum() / (B * K))
    decay = sum(float((w * w).sum()) for net in model.nets
                for w in net.decayed_params()) / K
    total = task + output_penalty * penalty + weight_decay * decay
    bd = LossBreakdown(task, penalty, decay, total)

    ctx = None
    if train_mode:
        d_contrib = d_logit[:, None] + output_penalty * 2.0 * contribs / (B * K)
        ctx = {
            "fwd": fwd_ctx,
            "d_logit": d_logit,
            "d_contrib": d_contrib,
            "weight_decay": weight_decay,
        }
    return bd, ctx


def nam_backward(model, ctx):
    """Parameter gradients for the last train-mode :func:`nam_loss` call."""
    if ctx is None:
        raise UsageError("nam_backward needs the ctx of a train-mode nam_loss")
    fwd = ctx["fwd"]
    d_contrib = ctx["d_contrib"]
    lam2 = ctx["weight_decay"]
    fmask = fwd["fmask"]
    K = model.n_features

    grads = []
    for k, net in enumerate(model.nets):
        if model.zeroed[k] or fwd["caches"][k] is None:
            grads.extend(np.zeros_like(a) for a in net.params())
            continue
        g = d_contrib[:, k]
        if fmask is not None:
            g = g * fmask[:, k]
        net_grads = net.backward(fwd["caches"][k], g[:, None])
        if lam2 != 0.0:
            decayed = net.decayed_params()
            for arr, grad in zip(net.params(), net_grads):
                if any(arr is d for d in decayed):
                    grad += lam2 * 2.0 * arr / K
        grads.extend(net_grads)
    grads.append(np.asarray(ctx["d_logit"].sum()))
    return grads


def center(model, X_train):
    """Shift each shape function to mean zero over the training data.

    The total shift moves into the global bias, so predictions are unchanged
    (an exact algebraic identity). Idempotent.
    """
    X_train = np.asarray(X_train, dtype=np.float64)
    if X_train.ndim != 2 or X_train.shape[0] == 0:
        raise UsageError("center needs a non-empty (B, K) training matrix")
    contribs, _, _ = nam_forward(model, X_train)
    means = contribs.mean(axis=0)
    model.offsets += means
    model.bias += means.sum()
    model.centered = True
    model.train_contrib_means = (contribs - means[None, :]).mean(axis=0)
    return model


def zero_out_feature(model, k):
    """Remove feature k's contribution from a centered model.

    The bias is untouched; because the centered contribution has mean zero
    over the training data, the mean prediction logit is preserved.
    """
    if not 0 <= k < model.n_features:
        raise IndexError(f"feature index {k} out of range [0, {model.n_features})")
    if not model.centered:
        raise UsageError("zero_out_feature requires a centered model")
    model.zeroed[k] = True
    return model


def shape_table(model, k, grid=256):
    """Sample feature k's centered shape function on a uniform grid.

    Returns (xs, values) with xs spanning the feature's training range.
    """
    if not 0 <= k < model.n_features:
        raise IndexError(f"feature index {k} out of range [0, {model.n_features})")
    if grid < 2:
        raise UsageError("grid must be at least 2")
    meta = model.feature_meta[k]
    xs = np.linspace(meta.vmin, meta.vmax, grid)
    if model.zeroed[k]:
        return xs, np.zeros(grid)
    out, _ = model.nets[k].forward(xs)
    return xs, out[:, 0] - model.offsets[k]


def feature_contributions(model, row):
    """Per-feature contribution breakdown for one input row.

    Returns (pairs, bias, prediction) where pairs is a list of
    (feature name, contribution) sorted by descending magnitude; bias plus
    the contributions, through the link, is exactly the prediction. For an
    ensemble, contributions and bias are member means, which decompose the
    ensemble's mean logit the same way.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (model.n_features,):
        raise DataError(
            f"expected a row of {model.n_features} features, got shape {row.shape}"
        )
    if isinstance(model, NamEnsemble):
        members = model.members
        vals = np.mean(
            [nam_forward(m, row[None, :])[0][0] for m in members], axis=0
        )
        bias = float(np.mean([float(m.bias) for m in members]))
        metas = model.feature_meta
        link = model.link
    else:
        contribs, _, _ = nam_forward(model, row[None, :])
        vals = contribs[0]
        bias = float(model.bias)
        metas = model.feature_meta
        link = model.link
    order = np.argsort(-np.abs(vals), kind="stable")
    pairs = [(metas[k].name, float(vals[k])) for k in order]
    logit = bias + float(vals.sum())
    pred = float(sigmoid(np.asarray(logit))) if link == "logistic" else logit
    return pairs, bias, pred


class NamEnsemble:
    """Bag of independently trained models over the same features.

    Aggregation averages member logits and applies the link once, so the
    ensemble is itself an additive model whose shape functions are the means
    of the members' shape functions.
    """

    def __init__(self, members):
        if len(members) == 0:
            raise UsageError("ensemble needs at least one member")
        first = members[0]
        for m in members[1:]:
            if m.link != first.link:
                raise ConfigError("ensemble members must share the link")
            if [fm.name for fm in m.feature_meta] != [
                fm.name for fm in first.feature_meta
            ]:
                raise ConfigError("ensemble members must share feature metadata")
        self.members: list[NamModel] = list(members)

    @property
    def link(self):
        return self.members[0].link

    @property
    def n_features(self):
        return self.members[0].n_features

    @property
    def feature_meta(self):
        return self.members[0].feature_meta

    @property
    def centered(self):
        return all(m.centered for m in self.members)

    def predict_logits(self, X):
        acc = self.members[0].predict_logits(X)
        for m in self.members[1:]:
            acc = acc + m.predict_logits(X)
        return acc / len(self.members)

    def predict(self, X):
        logits = self.predict_logits(X)
        return sigmoid(logits) if self.link == "logistic" else logits

    def member_shape_tables(self, k, grid=256):
        """Common grid plus one value column per member (thin-line plots)."""
        xs, first = shape_table(self.members[0], k, grid)
        cols = [first]
        for m in self.members[1:]:
            cols.append(shape_table(m, k, grid)[1])
        return xs, np.column_stack(cols)


def ensemble_predict(ensemble, X):
    """Mean member logit, passed through the shared link once."""
    return ensemble.predict(X)
