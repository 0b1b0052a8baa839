"""Command-line interface.

Subcommands: train, eval, cv, export-shapes, explain, ablate. Exit codes:
0 success, 2 usage/config error, 3 data error, 4 numeric failure. Every
command is deterministic given --seed; artifact files embed no timestamps,
so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields

import numpy as np

from .data import (
    Preprocessor,
    gen_multitask_synthetic,
    gen_paramgen_synthetic,
    gen_toy_jump,
    kfold_split,
    load_csv,
    train_val_split,
)
from .errors import ConfigError, DataError, NamkitError, UsageError
from .export import export_shapes
from .metrics import mse, pr_auc, rmse, roc_auc
from .model import (
    NamEnsemble,
    NamModel,
    build_nam,
    feature_contributions,
    zero_out_feature,
)
from .multitask import MultitaskNam, ParamGenModel, build_multitask, build_paramgen
from .serialize import load_model, save_model
from .tensor import make_rng
from .training import (
    TrainConfig,
    cross_validate,
    net_config_for,
    train,
    train_ensemble,
)

__all__ = ["main"]

_CFG_FLAGS = [f.name for f in fields(TrainConfig)]


def _add_cfg_flags(p):
    g = p.add_argument_group("training config (defaults from --config file)")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--lr", type=float)
    g.add_argument("--output-penalty", type=float, dest="output_penalty")
    g.add_argument("--weight-decay", type=float, dest="weight_decay")
    g.add_argument("--dropout", type=float)
    g.add_argument("--feature-dropout", type=float, dest="feature_dropout")
    g.add_argument("--batch", type=int)
    g.add_argument("--max-epochs", type=int, dest="max_epochs")
    g.add_argument("--lr-decay", type=float, dest="lr_decay")
    g.add_argument("--patience", type=int)
    g.add_argument("--seed", type=int)


def _add_data_flags(p, with_task=True):
    g = p.add_argument_group("data")
    g.add_argument("--data", help="CSV file (UTF-8, header row)")
    g.add_argument(
        "--synthetic", choices=["toy-jump", "multitask", "paramgen"],
        help="generate a built-in dataset instead of reading --data",
    )
    g.add_argument("--target", help="target column name(s), comma-separated")
    if with_task:
        g.add_argument("--task", choices=["classification", "regression"])
    g.add_argument("--rows", type=int, default=50000,
                   help="row count for --synthetic paramgen")
    g.add_argument("--no-preprocess", action="store_true",
                   help="skip imputation/standardization of CSV features")


def _make_cfg(args):
    overrides = {
        name: getattr(args, name)
        for name in _CFG_FLAGS
        if getattr(args, name, None) is not None
    }
    if getattr(args, "config", None):
        return TrainConfig.from_file(args.config, **overrides)
    return TrainConfig(**overrides)


def _target_list(args):
    if not args.target:
        return []
    return [t.strip() for t in args.target.split(",") if t.strip()]


def _load_dataset(args, seed):
    """(train_ds, test_ds-or-None); CSV data is preprocessed by default."""
    if args.synthetic and args.data:
        raise UsageError("pass either --data or --synthetic, not both")
    if args.synthetic == "toy-jump":
        return gen_toy_jump(seed), None
    if args.synthetic == "multitask":
        return gen_multitask_synthetic(seed=seed)
    if args.synthetic == "paramgen":
        return gen_paramgen_synthetic(args.rows, seed=seed), None
    if not args.data:
        raise UsageError("either --data or --synthetic is required")
    targets = _target_list(args)
    if not targets:
        raise UsageError("--target is required with --data")
    task = getattr(args, "task", None)
    if task is None:
        raise UsageError("--task is required with --data")
    ds = load_csv(args.data, targets if len(targets) > 1 else targets[0], task)
    if not args.no_preprocess:
        ds = Preprocessor().fit(ds.features).apply(ds)
    return ds, None


def _expected_width(model):
    if isinstance(model, ParamGenModel):
        return model.n_features + model.n_treatments
    return model.n_features


def _model_metas(model):
    base = model.base if isinstance(model, ParamGenModel) else model
    return base.feature_meta


def _to_model_units(model, X):
    """Standardize raw-unit columns with the model's stored per-feature
    transform; missing values land on the column mean (0 after scaling)."""
    X = np.asarray(X, dtype=np.float64)
    metas = _model_metas(model)
    K = len(metas)
    if X.ndim != 2 or X.shape[1] != _expected_width(model):
        raise DataError(
            f"model expects {_expected_width(model)} feature columns, "
            f"data has shape {X.shape}"
        )
    means = np.array([m.mean for m in metas])
    scales = np.array([m.scale for m in metas])
    Z = X[:, :K]
    Z = np.where(np.isnan(Z), means[None, :], Z)
    Z = (Z - means[None, :]) / scales[None, :]
    if X.shape[1] > K:
        Z = np.concatenate([Z, X[:, K:]], axis=1)
    return Z


def _task_kind_of(model):
    if isinstance(model, ParamGenModel):
        return "classification"
    if isinstance(model, MultitaskNam):
        return ("classification"
                if all(l == "logistic" for l in model.links) else "regression")
    return "classification" if model.link == "logistic" else "regression"


_CLS_METRICS = {"roc_auc": roc_auc, "pr_auc": pr_auc}
_REG_METRICS = {"rmse": rmse, "mse": mse}


def _model_metrics(model, X, Y, requested=None):
    """Ordered (name, value) metric pairs for a model on prepared inputs."""
    kind = _task_kind_of(model)
    table = _CLS_METRICS if kind == "classification" else _REG_METRICS
    if requested:
        if requested not in table:
            raise UsageError(
                f"metric {requested!r} is not defined for a {kind} model"
            )
        names = [requested]
    else:
        names = list(table)

    if isinstance(model, MultitaskNam):
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        preds = model.predict(X)
        if Y.shape != preds.shape:
            raise DataError(
                f"model predicts {preds.shape[1]} tasks, targets have "
                f"shape {Y.shape}"
            )
        pairs = []
        for name in names:
            fn = table[name]
            per_task = [
                float(fn(preds[:, t], Y[:, t])) for t in range(preds.shape[1])
            ]
            for t, v in enumerate(per_task):
                pairs.append((f"{model.task_names[t]}/{name}", v))
            pairs.append((f"mean/{name}", float(np.mean(per_task))))
        return pairs

    preds = model.predict(X)
    y = np.asarray(Y, dtype=np.float64)
    if y.ndim != 1:
        raise DataError("single-task model needs a single target column")
    return [(name, float(table[name](preds, y))) for name in names]


def _print_metrics(pairs, prefix=""):
    for name, value in pairs:
        print(f"{prefix}{name} = {value:.6f}")


def _report_payload(report):
    if isinstance(report, list):
        return [r.to_dict() for r in report]
    return report.to_dict()


def cmd_train(args):
    cfg = _make_cfg(args)
    train_ds, test_ds = _load_dataset(args, cfg.seed)
    rng = make_rng(cfg.seed)

    if args.synthetic == "paramgen":
        M = int(train_ds.components["n_treatments"])
        K = train_ds.n_features - M
        S = args.subnets or 1
        model = build_paramgen(
            K, M, S, net_config_for(args.arch, cfg), rng,
            feature_meta=train_ds.feature_meta()[:K],
        )
        tr, va = train_val_split(train_ds, rng)
        model, report = train(model, tr, va, cfg)
        model.center_on(tr.features)
    elif args.multitask:
        targets = train_ds.targets
        if targets.ndim == 1:
            targets = targets[:, None]
        T = targets.shape[1]
        S = args.subnets or 6
        model = build_multitask(
            train_ds.n_features, S, T, net_config_for(args.arch, cfg), rng,
            feature_meta=train_ds.feature_meta(), links=train_ds.link,
            task_names=train_ds.target_names,
        )
        model, report, X_tr = _train_mt(model, train_ds, targets, cfg)
        model.center_on(X_tr)
    elif args.members > 1:
        model, report = train_ensemble(train_ds, cfg, args.members, arch=args.arch)
    else:
        model = build_nam(
            train_ds.n_features, net_config_for(args.arch, cfg),
            train_ds.feature_meta(), train_ds.link, rng,
        )
        tr, va = train_val_split(train_ds, rng)
        model, report = train(model, tr, va, cfg)
        model.center_on(tr.features)

    save_model(args.out, model)
    print(f"saved model to {args.out}")
    if isinstance(report, list):
        losses = [r.best_val_loss for r in report]
        print(f"members: {len(report)}, "
              f"val task loss: {float(np.mean(losses)):.6f} "
              f"+/- {float(np.std(losses, ddof=1)) if len(losses) > 1 else 0.0:.6f}")
    else:
        print(f"epochs: {report.epochs_run} (best {report.best_epoch}), "
              f"best val task loss: {report.best_val_loss:.6f}")
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(_report_payload(report), fh, indent=1, sort_keys=True)
        print(f"wrote training report to {args.report}")
    if test_ds is not None:
        X_test = test_ds.features
        _print_metrics(
            _model_metrics(model, X_test, test_ds.targets), prefix="test "
        )
    return 0


def _train_mt(model, train_ds, targets, cfg):
    rng = make_rng(cfg.seed)
    B = train_ds.n_rows
    n_val = max(1, int(np.ceil(B * 0.125)))
    perm = rng.permutation(B)
    va_idx, tr_idx = perm[:n_val], perm[n_val:]
    X_tr = train_ds.features[tr_idx]
    model, report = train(
        model, (X_tr, targets[tr_idx]),
        (train_ds.features[va_idx], targets[va_idx]), cfg,
    )
    return model, report, X_tr


def cmd_eval(args):
    model = load_model(args.model)
    targets = _target_list(args)
    if not targets:
        raise UsageError("--target is required for eval")
    ds = load_csv(args.data, targets if len(targets) > 1 else targets[0],
                  _task_kind_of(model))
    X = _to_model_units(model, ds.features)
    Y = ds.targets

    if args.cv:
        folds = kfold_split(ds.n_rows, args.cv, args.seed or 0)
        rows = []
        for i, idx in enumerate(folds):
            pairs = _model_metrics(model, X[idx], Y[idx], args.metric)
            rows.append(pairs)
            _print_metrics(pairs, prefix=f"fold {i}: ")
        for j, (name, _) in enumerate(rows[0]):
            vals = [r[j][1] for r in rows]
            std = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            print(f"{name}: {float(np.mean(vals)):.6f} +/- {std:.6f}")
    else:
        _print_metrics(_model_metrics(model, X, Y, args.metric))
    return 0


def cmd_cv(args):
    cfg = _make_cfg(args)
    if args.multitask:
        raise UsageError("cv supports single-task models; train multitask "
                         "models with `train --multitask`")
    ds, _ = _load_dataset(args, cfg.seed)
    report = cross_validate(
        ds, cfg, folds=args.folds, members=args.members, metric=args.metric,
        arch=args.arch, do_preprocess=False,
    )
    print(report)
    return 0


def cmd_export_shapes(args):
    model = load_model(args.model)
    if args.synthetic:
        ds, _ = _load_dataset(args, args.seed or 0)
        features = ds.features
    elif args.data:
        targets = _target_list(args)
        ds = load_csv(args.data, targets if len(targets) != 1 else targets[0],
                      _task_kind_of(model))
        features = ds.features
    else:
        raise UsageError("export-shapes needs --data or --synthetic for the "
                         "density columns")
    written = export_shapes(model, features, args.out_dir, grid=args.grid,
                            svg=args.svg)
    for path in written:
        print(path)
    return 0


def cmd_explain(args):
    model = load_model(args.model)
    if not isinstance(model, (NamModel, NamEnsemble)):
        raise UsageError("explain supports single-task models and ensembles")
    if args.row:
        try:
            raw = np.array([float(v) for v in args.row.split(",")])
        except ValueError:
            raise DataError(f"unparseable --row value: {args.row!r}")
    elif args.data is not None and args.index is not None:
        targets = _target_list(args)
        ds = load_csv(args.data, targets if len(targets) != 1 else targets[0],
                      _task_kind_of(model))
        if not 0 <= args.index < ds.n_rows:
            raise DataError(f"--index {args.index} out of range "
                            f"[0, {ds.n_rows})")
        raw = ds.features[args.index]
    else:
        raise UsageError("explain needs --row or (--data and --index)")
    if raw.size != _expected_width(model):
        raise DataError(
            f"model expects {_expected_width(model)} features, row has {raw.size}"
        )
    x = _to_model_units(model, raw[None, :])[0]
    pairs, bias, pred = feature_contributions(model, x)
    print(f"prediction = {pred:.6f}")
    print(f"bias = {bias:.6f}")
    for name, contrib in pairs:
        print(f"{name}: {contrib:+.6f}")
    return 0


def cmd_ablate(args):
    model = load_model(args.model)
    if not isinstance(model, (NamModel, NamEnsemble)):
        raise UsageError("ablate supports single-task models and ensembles")
    members = model.members if isinstance(model, NamEnsemble) else [model]
    metas = _model_metas(model)
    names = [m.name for m in metas]
    if args.feature in names:
        k = names.index(args.feature)
    else:
        try:
            k = int(args.feature)
        except ValueError:
            raise UsageError(
                f"--feature must be an index or one of {names}, "
                f"got {args.feature!r}"
            )

    if args.data:
        targets = _target_list(args)
        ds = load_csv(args.data, targets if len(targets) != 1 else targets[0],
                      _task_kind_of(model))
        X = _to_model_units(model, ds.features)
        before = model.predict_logits(X)
        for m in members:
            zero_out_feature(m, k)
        after = model.predict_logits(X)
        drift = abs(float(before.mean() - after.mean()))
        source = f"over {X.shape[0]} data rows"
    else:
        for m in members:
            zero_out_feature(m, k)
        drifts = [
            abs(float(m.train_contrib_means[k]))
            for m in members if m.train_contrib_means is not None
        ]
        if not drifts:
            raise UsageError(
                "no stored training means; pass --data to measure drift"
            )
        drift = max(drifts)
        source = "from stored training means"
    print(f"zeroed feature {k} ({names[k]}); mean-logit drift {source}: "
          f"{drift:.3e}")
    save_model(args.out, model)
    print(f"saved model to {args.out}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="namkit",
        description="Neural additive models: train, evaluate, and export "
                    "per-feature shape functions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and serialize it")
    _add_data_flags(p)
    _add_cfg_flags(p)
    p.add_argument("--arch", choices=["standard", "exu"], default="standard")
    p.add_argument("--multitask", action="store_true",
                   help="train one multitask model over all target columns")
    p.add_argument("--subnets", type=int,
                   help="subnets per feature (multitask/paramgen)")
    p.add_argument("--members", type=int, default=1,
                   help="ensemble size (single-task only)")
    p.add_argument("--out", default="model.namkit")
    p.add_argument("--report", help="write the training report as JSON")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a serialized model on a CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--metric", choices=["roc_auc", "pr_auc", "rmse", "mse"])
    p.add_argument("--cv", type=int, help="report per-fold metrics over k folds")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="k-fold cross-validation of the full "
                                  "train-ensemble protocol")
    _add_data_flags(p)
    _add_cfg_flags(p)
    p.add_argument("--arch", choices=["standard", "exu"], default="standard")
    p.add_argument("--multitask", action="store_true")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--members", type=int, default=20)
    p.add_argument("--metric", choices=["roc_auc", "pr_auc", "rmse", "mse"])
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("export-shapes",
                       help="write per-feature shape CSVs (and SVGs)")
    p.add_argument("--model", required=True)
    _add_data_flags(p, with_task=False)
    p.add_argument("--out-dir", default="shapes")
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--seed", type=int, default=0,
                   help="seed for --synthetic density data")
    p.set_defaults(func=cmd_export_shapes)

    p = sub.add_parser("explain", help="per-feature contributions for one row")
    p.add_argument("--model", required=True)
    p.add_argument("--row", help="comma-separated feature values (raw units)")
    p.add_argument("--data", help="CSV to pull the row from")
    p.add_argument("--target", help="target column(s) to exclude from --data")
    p.add_argument("--index", type=int, help="row number within --data")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("ablate", help="zero out one feature of a centered model")
    p.add_argument("--model", required=True)
    p.add_argument("--feature", required=True,
                   help="feature index or feature name")
    p.add_argument("--data", help="CSV for measuring the mean-logit drift")
    p.add_argument("--target", help="target column(s) in --data")
    p.add_argument("--out", required=True, help="path for the ablated model")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except IndexError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NamkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
