"""Adam training with annealed learning rate, early stopping, ensembles,
k-fold cross-validation, and random hyperparameter search.

The trainer is generic over models exposing param_arrays / loss_and_grads /
eval_task_loss / snapshot / restore (NamModel, MultitaskNam, ParamGenModel,
and the MLP baseline all do). Everything is seeded: (seed, config, dataset)
determine the trained parameters bit-exactly on one platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .data import Preprocessor, kfold_split, train_val_split
from .errors import ConfigError, NumericError, UsageError
from .feature_net import FeatureNetConfig
from .metrics import mse, pr_auc, rmse, roc_auc
from .model import NamEnsemble, build_nam
from .tensor import child_seeds, make_rng

__all__ = [
    "TrainConfig",
    "AdamState",
    "adam_step",
    "TrainReport",
    "train",
    "train_ensemble",
    "CVReport",
    "cross_validate",
    "DEFAULT_SEARCH_SPACE",
    "SearchResult",
    "random_search",
    "net_config_for",
]

_INT_FIELDS = {"batch", "max_epochs", "patience", "seed"}


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the four regularizers are, in order, output
    penalty, weight decay, unit dropout, and feature dropout."""

    lr: float = 0.01
    output_penalty: float = 0.0
    weight_decay: float = 0.0
    dropout: float = 0.0
    feature_dropout: float = 0.0
    batch: int = 1024
    max_epochs: int = 1000
    lr_decay: float = 0.995
    patience: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ConfigError("lr must be positive")
        for name in ("output_penalty", "weight_decay"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be non-negative")
        for name in ("dropout", "feature_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1)")
        if self.batch < 1 or self.max_epochs < 1:
            raise ConfigError("batch and max_epochs must be at least 1")
        if not 0.0 < self.lr_decay <= 1.0:
            raise ConfigError("lr_decay must lie in (0, 1]")
        if self.patience < 0:
            raise ConfigError("patience must be non-negative")

    @classmethod
    def from_file(cls, path, **overrides):
        """Load `key = value` lines; # starts a comment, blanks are skipped.

        Explicit keyword overrides (e.g. from CLI flags) win over the file.
        """
        known = {f.name for f in fields(cls)}
        values = {}
        try:
            with open(path, encoding="utf-8") as fh:
                for lineno, raw in enumerate(fh, start=1):
                    line = raw.split("#", 1)[0].strip()
                    if not line:
                        continue
                    if "=" not in line:
                        raise ConfigError(
                            f"{path}:{lineno}: expected 'key = value', got {raw!r}"
                        )
                    key, _, val = line.partition("=")
                    key, val = key.strip(), val.strip()
                    if key not in known:
                        raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                    try:
                        values[key] = int(val) if key in _INT_FIELDS else float(val)
                    except ValueError:
                        raise ConfigError(
                            f"{path}:{lineno}: bad value {val!r} for {key!r}"
                        )
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}")
        values.update(overrides)
        return cls(**values)


def net_config_for(arch, cfg, output_dim=1):
    """FeatureNetConfig matching an architecture name and a TrainConfig."""
    return FeatureNetConfig(arch=arch, dropout=cfg.dropout, output_dim=output_dim)


class AdamState:
    """First/second moment estimates mirroring one parameter list."""

    beta1 = 0.9
    beta2 = 0.999
    eps = 1e-8

    def __init__(self, params):
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0


def adam_step(params, grads, state, lr_t):
    """One in-place Adam update; raises on non-finite gradients."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise UsageError("params, grads, and state must be aligned")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NumericError(
                f"non-finite gradient for parameter {i} (shape {np.shape(g)}) "
                f"at Adam step {state.t + 1}"
            )
    state.t += 1
    b1, b2 = AdamState.beta1, AdamState.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p[...] -= lr_t * (m / c1) / (np.sqrt(v / c2) + AdamState.eps)
    return params, state


@dataclass
class TrainReport:
    """Per-epoch history; best_epoch = -1 means the initial parameters won
    (no epoch improved on them, only possible with non-finite val losses)."""

    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopped_early: bool = False

    @property
    def epochs_run(self):
        return len(self.val_losses)

    def to_dict(self):
        return {
            "train_losses": [float(v) for v in self.train_losses],
            "val_losses": [float(v) for v in self.val_losses],
            "best_epoch": self.best_epoch,
            "best_val_loss": float(self.best_val_loss),
            "stopped_early": self.stopped_early,
            "epochs_run": self.epochs_run,
        }


def _xy(split):
    if isinstance(split, (tuple, list)):
        X, y = split
        return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.float64)
    return split.features, split.targets


def train(model, train_set, val_set, cfg):
    """Minibatch Adam with per-epoch lr decay and early stopping.

    Each epoch shuffles with the config-seeded rng (which also drives the
    dropout masks), runs lr_t = lr * lr_decay**epoch, and records the mean
    train loss and the validation task loss. Training stops once
    `patience` epochs pass without a validation improvement (patience 0
    stops after exactly one epoch); the best epoch's parameters are
    restored before returning.
    """
    X_tr, y_tr = _xy(train_set)
    X_val, y_val = _xy(val_set)
    if X_tr.shape[0] == 0 or X_val.shape[0] == 0:
        raise UsageError("train and validation sets must be non-empty")
    rng = make_rng(cfg.seed)
    params = model.param_arrays()
    state = AdamState(params)
    report = TrainReport()
    best_snap = model.snapshot()
    B = X_tr.shape[0]

    for epoch in range(cfg.max_epochs):
        lr_t = cfg.lr * cfg.lr_decay ** epoch
        perm = rng.permutation(B)
        total = 0.0
        for start in range(0, B, cfg.batch):
            idx = perm[start:start + cfg.batch]
            bd, grads = model.loss_and_grads(X_tr[idx], y_tr[idx], cfg, rng)
            adam_step(params, grads, state, lr_t)
            total += bd.total * idx.size
        report.train_losses.append(total / B)
        val_loss = model.eval_task_loss(X_val, y_val)
        report.val_losses.append(val_loss)
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            best_snap = model.snapshot()
        if epoch - report.best_epoch >= cfg.patience:
            report.stopped_early = True
            break

    model.restore(best_snap)
    return model, report


def _default_build(dataset, cfg, arch):
    def build(ds, rng):
        return build_nam(
            ds.n_features, net_config_for(arch, cfg), ds.feature_meta(),
            ds.link, rng,
        )

    return build


def train_ensemble(dataset, cfg, members=20, arch="standard", build_fn=None):
    """Train `members` models on independent seeded train/val splits.

    Every member draws its own 7/8 train : 1/8 validation split of the given
    pool, trains, and is centered on its own train rows. Member seeds are
    spawned from cfg.seed, so the whole ensemble is reproducible.
    Returns (NamEnsemble, list of TrainReport).
    """
    if members < 1:
        raise UsageError("need at least one ensemble member")
    if build_fn is None:
        build_fn = _default_build(dataset, cfg, arch)
    seeds = child_seeds(cfg.seed, members)
    models, reports = [], []
    for ss in seeds:
        rng = np.random.default_rng(ss)
        tr, va = train_val_split(dataset, rng)
        model = build_fn(dataset, rng)
        member_cfg = replace(cfg, seed=int(ss.generate_state(1)[0]))
        model, rep = train(model, tr, va, member_cfg)
        model.center_on(tr.features)
        models.append(model)
        reports.append(rep)
    return NamEnsemble(models), reports


_METRICS = {"roc_auc": roc_auc, "pr_auc": pr_auc, "rmse": rmse, "mse": mse}


@dataclass
class CVReport:
    metric: str
    per_fold: list
    mean: float
    std: float

    def __str__(self):
        lines = [
            f"fold {i}: {self.metric} = {v:.6f}"
            for i, v in enumerate(self.per_fold)
        ]
        lines.append(f"{self.metric}: {self.mean:.6f} +/- {self.std:.6f}")
        return "\n".join(lines)


def cross_validate(dataset, cfg, folds=5, members=20, metric=None,
                   arch="standard", build_fn=None, do_preprocess=True):
    """Per-fold held-out metric of ensembles trained on the remaining rows.

    Each fold becomes the test set; the rest is the pool handed to
    train_ensemble. Preprocessing is refit on each fold's pool so no test
    statistics leak into training. std is the sample standard deviation.
    """
    if folds < 2:
        raise UsageError("cross-validation needs at least 2 folds")
    if dataset.n_rows < folds:
        raise UsageError(
            f"dataset of {dataset.n_rows} rows cannot form {folds} folds"
        )
    if metric is None:
        metric = "roc_auc" if dataset.task_kind == "classification" else "rmse"
    if isinstance(metric, str):
        if metric not in _METRICS:
            raise ConfigError(f"unknown metric {metric!r}")
        metric_name, metric_fn = metric, _METRICS[metric]
    else:
        metric_name, metric_fn = getattr(metric, "__name__", "metric"), metric

    fold_idx = kfold_split(dataset.n_rows, folds, cfg.seed)
    fold_seeds = child_seeds(cfg.seed, folds)
    per_fold = []
    for i in range(folds):
        test = dataset.subset(fold_idx[i])
        pool_rows = np.concatenate([fold_idx[j] for j in range(folds) if j != i])
        pool = dataset.subset(pool_rows)
        if do_preprocess:
            prep = Preprocessor().fit(pool.features)
            pool, test = prep.apply(pool), prep.apply(test)
        fold_cfg = replace(cfg, seed=int(fold_seeds[i].generate_state(1)[0]))
        ensemble, _ = train_ensemble(pool, fold_cfg, members, arch, build_fn)
        preds = ensemble.predict(test.features)
        per_fold.append(float(metric_fn(preds, test.targets)))

    mean = float(np.mean(per_fold))
    std = float(np.std(per_fold, ddof=1)) if folds > 1 else 0.0
    return CVReport(metric_name, per_fold, mean, std)


# (kind, *args): log-uniform over [lo, hi) or a uniform choice from a set
DEFAULT_SEARCH_SPACE = {
    "lr": ("log", 1e-3, 1e-1),
    "output_penalty": ("log", 1e-3, 1e-1),
    "weight_decay": ("log", 1e-6, 1e-4),
    "dropout": ("choice", tuple(round(0.1 * i, 1) for i in range(10))),
    "feature_dropout": ("choice", (0.0, 0.05, 0.1, 0.2)),
}


@dataclass
class SearchResult:
    best: TrainConfig
    best_loss: float
    trials: list  # (TrainConfig, val_loss) per sampled config


def _sample_space(space, rng):
    sampled = {}
    for key, rule in space.items():
        kind = rule[0]
        if kind == "log":
            lo, hi = rule[1], rule[2]
            sampled[key] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        elif kind == "choice":
            options = rule[1]
            sampled[key] = float(options[rng.integers(len(options))])
        else:
            raise ConfigError(f"unknown sampling rule {kind!r} for {key!r}")
    return sampled


def random_search(dataset, cfg, budget, rng=None, space=None, arch="standard",
                  build_fn=None):
    """Sample `budget` configs and rank them by single-split validation loss.

    All trials share one train/val split of the dataset (drawn from
    cfg.seed) so their scores are comparable.
    """
    if budget < 1:
        raise UsageError("search budget must be at least 1")
    if rng is None:
        rng = make_rng(cfg.seed)
    if space is None:
        space = DEFAULT_SEARCH_SPACE
    tr, va = train_val_split(dataset, make_rng(cfg.seed))

    trials = []
    best = None
    for _ in range(budget):
        sampled = _sample_space(space, rng)
        trial_seed = int(rng.integers(2 ** 31))
        trial_cfg = replace(cfg, seed=trial_seed, **sampled)
        builder = build_fn or _default_build(dataset, trial_cfg, arch)
        model = builder(dataset, make_rng(trial_seed))
        _, rep = train(model, tr, va, trial_cfg)
        trials.append((trial_cfg, rep.best_val_loss))
        if best is None or rep.best_val_loss < best[1]:
            best = (trial_cfg, rep.best_val_loss)
    return SearchResult(best[0], best[1], trials)
