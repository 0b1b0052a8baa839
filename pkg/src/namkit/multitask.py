"""Multitask neural additive model and the treatment-benefit head.

Each feature k owns S subnets producing outputs u[b, k, s]. Task t mixes them
with learned weights: logit_t(x) = beta_t + sum_k (sum_s a[t,k,s] u_{k,s}(x_k)
- c[t,k]). The subnet count S is independent of the task count T, and with
S = T = 1 and unit mixing weight the model collapses exactly to the
single-task path (identical losses and gradients on identical parameters).

ParamGenModel reuses the machinery for treatment-effect modelling: a base
model with M + 1 heads emits a baseline risk logit and one additive benefit
logit per treatment; the risk of an example with treatment indicators d is
sigmoid(baseline(x) + sum_m d_m * benefit_m(x)), trained end to end with
cross-entropy against the observed outcome.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError, DimensionError, UsageError
from .feature_net import build_feature_net
from .model import LINKS, PROB_EPS, FeatureMeta, LossBreakdown
from .tensor import sigmoid

__all__ = [
    "MultitaskNam",
    "build_multitask",
    "mt_forward",
    "mt_loss",
    "mt_backward",
    "mt_center",
    "mt_shape_table",
    "ParamGenModel",
    "build_paramgen",
    "paramgen_forward",
    "paramgen_loss",
]


class MultitaskNam:
    """K features x S subnets, mixed per task by a (T, K, S) weight tensor."""

    def __init__(self, subnets, mix, links, feature_meta, task_names=None):
        K = len(subnets)
        if K == 0 or any(len(row) == 0 for row in subnets):
            raise ConfigError("need at least one feature and one subnet")
        S = len(subnets[0])
        if any(len(row) != S for row in subnets):
            raise ConfigError("every feature must have the same subnet count")
        mix = np.asarray(mix, dtype=np.float64)
        if mix.ndim != 3 or mix.shape[1:] != (K, S):
            raise ConfigError(f"mix must have shape (T, {K}, {S}), got {mix.shape}")
        T = mix.shape[0]
        if isinstance(links, str):
            links = [links] * T
        if len(links) != T or any(l not in LINKS for l in links):
            raise ConfigError(f"need one link per task, each from {LINKS}")
        if len(feature_meta) != K:
            raise ConfigError("one FeatureMeta per feature is required")
        self.subnets = [list(row) for row in subnets]
        self.mix = mix
        self.links = list(links)
        self.feature_meta = list(feature_meta)
        self.task_bias = np.zeros(T)
        self.offsets = np.zeros((T, K))
        self.task_names = list(task_names) if task_names else [
            f"task_{t}" for t in range(T)
        ]
        self.centered = False

    @property
    def n_features(self):
        return len(self.subnets)

    @property
    def n_subnets(self):
        return len(self.subnets[0])

    @property
    def n_tasks(self):
        return self.mix.shape[0]

    def param_arrays(self):
        arrs = [a for row in self.subnets for net in row for a in net.params()]
        arrs.append(self.mix)
        arrs.append(self.task_bias)
        return arrs

    def decay_flags(self):
        flags = []
        for row in self.subnets:
            for net in row:
                decayed = net.decayed_params()
                for arr in net.params():
                    flags.append(any(arr is d for d in decayed))
        flags.extend([False, False])
        return flags

    def snapshot(self):
        return [a.copy() for a in self.param_arrays()]

    def restore(self, snap):
        for a, saved in zip(self.param_arrays(), snap):
            a[...] = saved

    def forward(self, X, train_mode=False, rng=None, feature_dropout=0.0):
        return mt_forward(self, X, train_mode, rng, feature_dropout)

    def predict_logits(self, X):
        logits, _ = mt_forward(self, X)
        return logits

    def predict(self, X):
        logits = self.predict_logits(X)
        out = logits.copy()
        for t, link in enumerate(self.links):
            if link == "logistic":
                out[:, t] = sigmoid(logits[:, t])
        return out

    def loss_and_grads(self, X, Y, cfg, rng):
        """Train-mode loss and gradients; NaN entries in Y mark masked tasks."""
        bd, ctx = mt_loss(
            self, X, Y, task_mask=None,
            output_penalty=cfg.output_penalty, weight_decay=cfg.weight_decay,
            train_mode=True, rng=rng, feature_dropout=cfg.feature_dropout,
        )
        return bd, mt_backward(self, ctx)

    def eval_task_loss(self, X, Y):
        bd, _ = mt_loss(self, X, Y, None, 0.0, 0.0, train_mode=False, rng=None)
        return bd.task_loss

    def center_on(self, X_train):
        return mt_center(self, X_train)


def build_multitask(K, S, T, cfg, rng, feature_meta=None, links="identity",
                    task_names=None):
    """Fresh model: subnets per feature_net, mix ~ Uniform(+-1/sqrt(S))."""
    if K < 1 or S < 1 or T < 1:
        raise ConfigError(f"K, S, T must all be >= 1, got {(K, S, T)}")
    if cfg.output_dim != 1:
        raise ConfigError("multitask subnets must have output_dim 1")
    if feature_meta is None:
        feature_meta = [FeatureMeta(f"x{k}", -1.0, 1.0) for k in range(K)]
    if len(feature_meta) != K:
        raise ConfigError("feature_meta length must equal K")
    subnets = [
        [
            build_feature_net(cfg, (m.vmin, m.vmax), rng, feature_index=k)
            for _ in range(S)
        ]
        for k, m in enumerate(feature_meta)
    ]
    lim = 1.0 / np.sqrt(S)
    mix = rng.uniform(-lim, lim, size=(T, K, S))
    return MultitaskNam(subnets, mix, links, feature_meta, task_names)


def mt_forward(model, X, train_mode=False, rng=None, feature_dropout=0.0):
    """Per-task logits (B, T) plus train-mode caches.

    Feature dropout removes a whole feature per example: all S subnet outputs
    and every task's use of them, rescaled by 1/(1 - rate).
    """
    X = np.asarray(X, dtype=np.float64)
    K, S = model.n_features, model.n_subnets
    if X.ndim != 2 or X.shape[1] != K:
        raise DimensionError(f"expected X of shape (B, {K}), got {X.shape}")
    B = X.shape[0]

    u = np.zeros((B, K, S))
    caches = [[None] * S for _ in range(K)]
    for k in range(K):
        for s in range(S):
            out, cache = model.subnets[k][s].forward(
                X[:, k], train_mode=train_mode, rng=rng
            )
            u[:, k, s] = out[:, 0]
            caches[k][s] = cache

    # contrib[b, t, k] = sum_s a[t,k,s] u[b,k,s] - c[t,k]
    contrib = np.einsum("tks,bks->btk", model.mix, u) - model.offsets[None, :, :]
    fmask = None
    if train_mode and feature_dropout > 0.0:
        if rng is None:
            raise UsageError("feature dropout needs an rng")
        keep = rng.random((B, K)) >= feature_dropout
        fmask = keep / (1.0 - feature_dropout)
        contrib = contrib * fmask[:, None, :]

    logits = model.task_bias[None, :] + contrib.sum(axis=2)
    # u and contrib ride along even in eval mode so mt_loss can reuse them;
    # the per-subnet caches are None unless train_mode
    ctx = {"caches": caches, "u": u, "fmask": fmask, "contrib": contrib}
    return logits, ctx


def _entry_losses(links, logits, Y, mask):
    """Per-entry task losses and d(loss)/d(logit) before normalization."""
    losses = np.zeros_like(logits)
    dlogit = np.zeros_like(logits)
    for t, link in enumerate(links):
        m = mask[:, t].astype(bool)
        if not m.any():
            continue
        z = logits[m, t]
        y = Y[m, t]
        if link == "logistic":
            if not np.all((y == 0.0) | (y == 1.0)):
                raise DataError(f"logistic targets for task {t} must be 0 or 1")
            p = sigmoid(z)
            pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
            losses[m, t] = -y * np.log(pc) - (1.0 - y) * np.log1p(-pc)
            dlogit[m, t] = p - y
        else:
            r = z - y
            losses[m, t] = r * r
            dlogit[m, t] = 2.0 * r
    return losses, dlogit


def mt_loss(model, X, Y, task_mask, output_penalty, weight_decay,
            train_mode, rng, feature_dropout=0.0):
    """Masked multitask loss; T = 1 with a full mask reduces to nam_loss.

    task_loss and the output penalty are means over the unmasked (b, t)
    entries; weight decay averages ||weights||^2 over all K*S subnets. When
    task_mask is None it is derived from finite entries of Y (NaN = masked).
    Returns (LossBreakdown, ctx) for :func:`mt_backward`.
    """
    Y = np.asarray(Y, dtype=np.float64)
    T = model.n_tasks
    logits, fwd_ctx = mt_forward(
        model, X, train_mode=train_mode, rng=rng, feature_dropout=feature_dropout
    )
    if Y.shape != logits.shape:
        raise DimensionError(f"targets of shape {Y.shape} vs logits {logits.shape}")
    if task_mask is None:
        task_mask = np.isfinite(Y).astype(np.float64)
    else:
        task_mask = np.asarray(task_mask, dtype=np.float64)
        if task_mask.shape != Y.shape:
            raise DimensionError("task_mask must match Y's shape")
        if not np.all((task_mask == 0.0) | (task_mask == 1.0)):
            raise DataError("task_mask entries must be 0 or 1")
        if np.any(np.isnan(Y) & (task_mask == 1.0)):
            raise DataError("NaN target in an unmasked entry")
    n_active = task_mask.sum()
    if n_active == 0:
        raise UsageError("loss with every (example, task) entry masked is undefined")

    Yf = np.where(task_mask == 1.0, Y, 0.0)
    losses, dlogit_raw = _entry_losses(model.links, logits, Yf, task_mask)
    task = float((losses * task_mask).sum() / n_active)

    K = model.n_features
    contrib = fwd_ctx["contrib"]
    # contrib is (B, T, K); weight unmasked (b, t) entries only
    csq = contrib * contrib
    penalty = float((csq * task_mask[:, :, None]).sum() / (n_active * K))

    decay = sum(
        float((w * w).sum())
        for row in model.subnets for net in row for w in net.decayed_params()
    ) / (K * model.n_subnets)
    total = task + output_penalty * penalty + weight_decay * decay
    bd = LossBreakdown(task, penalty, decay, total)

    ctx = None
    if train_mode:
        d_logit = task_mask * dlogit_raw / n_active
        d_contrib = (
            d_logit[:, :, None]
            + output_penalty * 2.0 * contrib * task_mask[:, :, None] / (n_active * K)
        )
        ctx = {
            "fwd": fwd_ctx,
            "d_logit": d_logit,
            "d_contrib": d_contrib,
            "weight_decay": weight_decay,
        }
    return bd, ctx


def _eval_u(model, X):
    X = np.asarray(X, dtype=np.float64)
    B, K, S = X.shape[0], model.n_features, model.n_subnets
    u = np.zeros((B, K, S))
    for k in range(K):
        for s in range(S):
            out, _ = model.subnets[k][s].forward(X[:, k])
            u[:, k, s] = out[:, 0]
    return u


def mt_backward(model, ctx):
    """Parameter gradients for the last train-mode :func:`mt_loss` call."""
    if ctx is None:
        raise UsageError("mt_backward needs the ctx of a train-mode mt_loss")
    fwd = ctx["fwd"]
    d_contrib = ctx["d_contrib"]
    lam2 = ctx["weight_decay"]
    fmask = fwd["fmask"]
    u = fwd["u"]
    K, S = model.n_features, model.n_subnets

    # gradient w.r.t. the raw (pre feature-dropout) mixed contribution
    d_raw = d_contrib if fmask is None else d_contrib * fmask[:, None, :]
    grad_mix = np.einsum("btk,bks->tks", d_raw, u)
    grad_u = np.einsum("btk,tks->bks", d_raw, model.mix)

    grads = []
    denom = K * S
    for k in range(K):
        for s in range(S):
            net = model.subnets[k][s]
            net_grads = net.backward(fwd["caches"][k][s], grad_u[:, k, s][:, None])
            if lam2 != 0.0:
                decayed = net.decayed_params()
                for arr, grad in zip(net.params(), net_grads):
                    if any(arr is d for d in decayed):
                        grad += lam2 * 2.0 * arr / denom
            grads.extend(net_grads)
    grads.append(grad_mix)
    grads.append(ctx["d_logit"].sum(axis=0))
    return grads


def mt_center(model, X_train):
    """Per-(task, feature) centering; task logits are unchanged. Idempotent."""
    X_train = np.asarray(X_train, dtype=np.float64)
    if X_train.ndim != 2 or X_train.shape[0] == 0:
        raise UsageError("mt_center needs a non-empty (B, K) training matrix")
    u = _eval_u(model, X_train)
    contrib = np.einsum("tks,bks->btk", model.mix, u) - model.offsets[None, :, :]
    means = contrib.mean(axis=0)  # (T, K)
    model.offsets += means
    model.task_bias += means.sum(axis=1)
    model.centered = True
    return model


def mt_shape_table(model, k, t, grid=256):
    """Task t's centered shape function for feature k on a uniform grid."""
    if not 0 <= k < model.n_features:
        raise IndexError(f"feature index {k} out of range [0, {model.n_features})")
    if not 0 <= t < model.n_tasks:
        raise IndexError(f"task index {t} out of range [0, {model.n_tasks})")
    if grid < 2:
        raise UsageError("grid must be at least 2")
    meta = model.feature_meta[k]
    xs = np.linspace(meta.vmin, meta.vmax, grid)
    vals = np.zeros(grid)
    for s in range(model.n_subnets):
        out, _ = model.subnets[k][s].forward(xs)
        vals += model.mix[t, k, s] * out[:, 0]
    return xs, vals - model.offsets[t, k]


class ParamGenModel:
    """Baseline risk plus one additive benefit logit per treatment.

    The base model's head 0 is the baseline; head m+1 is the benefit of
    treatment m. Inputs to the training path are the feature columns with the
    M binary treatment indicator columns appended, so the model plugs into
    the generic trainer unchanged.
    """

    def __init__(self, base, n_treatments):
        if base.n_tasks != n_treatments + 1:
            raise ConfigError(
                f"base must have {n_treatments + 1} heads for "
                f"{n_treatments} treatments, got {base.n_tasks}"
            )
        if any(l != "identity" for l in base.links):
            raise ConfigError("paramgen heads must use the identity link")
        self.base = base
        self.n_treatments = n_treatments
        self.centered = False

    @property
    def n_features(self):
        return self.base.n_features

    def split_inputs(self, XD):
        XD = np.asarray(XD, dtype=np.float64)
        want = self.n_features + self.n_treatments
        if XD.ndim != 2 or XD.shape[1] != want:
            raise DimensionError(
                f"expected (B, {want}) feature+treatment matrix, got {XD.shape}"
            )
        X = XD[:, : self.n_features]
        D = XD[:, self.n_features:]
        if not np.all((D == 0.0) | (D == 1.0)):
            raise DataError("treatment indicators must be 0 or 1")
        return X, D

    def param_arrays(self):
        return self.base.param_arrays()

    def decay_flags(self):
        return self.base.decay_flags()

    def snapshot(self):
        return self.base.snapshot()

    def restore(self, snap):
        self.base.restore(snap)

    def predict(self, XD):
        X, D = self.split_inputs(XD)
        return paramgen_forward(self, X, D)

    def benefit_table(self, k, m, grid=256):
        """Shape table of benefit head m over feature k."""
        if not 0 <= m < self.n_treatments:
            raise IndexError(f"treatment index {m} out of range")
        return mt_shape_table(self.base, k, m + 1, grid)

    def loss_and_grads(self, XD, y, cfg, rng):
        X, D = self.split_inputs(XD)
        bd, ctx = paramgen_loss(
            self, X, D, y,
            output_penalty=cfg.output_penalty, weight_decay=cfg.weight_decay,
            train_mode=True, rng=rng, feature_dropout=cfg.feature_dropout,
        )
        return bd, mt_backward(self.base, ctx)

    def eval_task_loss(self, XD, y):
        X, D = self.split_inputs(XD)
        bd, _ = paramgen_loss(self, X, D, y, 0.0, 0.0, train_mode=False, rng=None)
        return bd.task_loss

    def center_on(self, XD_train):
        X, _ = self.split_inputs(XD_train)
        mt_center(self.base, X)
        self.centered = True
        return self


def build_paramgen(K, M, S, cfg, rng, feature_meta=None):
    """Paramgen model with M+1 identity heads over K features, S subnets."""
    if M < 1:
        raise ConfigError("need at least one treatment")
    base = build_multitask(
        K, S, M + 1, cfg, rng, feature_meta=feature_meta, links="identity",
        task_names=["baseline"] + [f"benefit_{m}" for m in range(M)],
    )
    return ParamGenModel(base, M)


def paramgen_forward(pg, X, D):
    """Mortality risk sigma(baseline(x) + sum_m d_m benefit_m(x))."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[1] != pg.n_treatments:
        raise DimensionError(
            f"expected treatments of shape (B, {pg.n_treatments}), got {D.shape}"
        )
    if not np.all((D == 0.0) | (D == 1.0)):
        raise DataError("treatment indicators must be 0 or 1")
    out, _ = mt_forward(pg.base, X)
    risk_logit = out[:, 0] + (D * out[:, 1:]).sum(axis=1)
    return sigmoid(risk_logit)


def paramgen_loss(pg, X, D, y, output_penalty, weight_decay, train_mode, rng,
                  feature_dropout=0.0):
    """Cross-entropy of the composed risk, with the usual penalties.

    The output penalty weights head entries by participation: the baseline
    everywhere, benefit head m only where d_m = 1. Untreated examples
    therefore contribute no gradient to any benefit head.
    """
    D = np.asarray(D, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    base = pg.base
    logits, fwd_ctx = mt_forward(
        base, X, train_mode=train_mode, rng=rng, feature_dropout=feature_dropout
    )
    B = logits.shape[0]
    if B == 0:
        raise UsageError("loss of an empty batch is undefined")
    if D.shape != (B, pg.n_treatments):
        raise DimensionError(
            f"expected treatments of shape ({B}, {pg.n_treatments}), got {D.shape}"
        )
    if not np.all((D == 0.0) | (D == 1.0)):
        raise DataError("treatment indicators must be 0 or 1")
    if y.shape != (B,):
        raise DimensionError(f"expected targets of shape ({B},), got {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise DataError("outcomes must be 0 or 1")

    risk_logit = logits[:, 0] + (D * logits[:, 1:]).sum(axis=1)
    p = sigmoid(risk_logit)
    pc = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    task = float(np.mean(-y * np.log(pc) - (1.0 - y) * np.log1p(-pc)))

    mask = np.concatenate([np.ones((B, 1)), D], axis=1)  # (B, T)
    n_active = mask.sum()
    K = base.n_features
    contrib = fwd_ctx["contrib"]
    penalty = float(((contrib * contrib) * mask[:, :, None]).sum() / (n_active * K))
    decay = sum(
        float((w * w).sum())
        for row in base.subnets for net in row for w in net.decayed_params()
    ) / (K * base.n_subnets)
    total = task + output_penalty * penalty + weight_decay * decay
    bd = LossBreakdown(task, penalty, decay, total)

    ctx = None
    if train_mode:
        d_risk = (p - y) / B
        d_logit = d_risk[:, None] * mask
        d_contrib = (
            d_logit[:, :, None]
            + output_penalty * 2.0 * contrib * mask[:, :, None] / (n_active * K)
        )
        ctx = {
            "fwd": fwd_ctx,
            "d_logit": d_logit,
            "d_contrib": d_contrib,
            "weight_decay": weight_decay,
        }
    return bd, ctx
