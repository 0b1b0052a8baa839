"""Acceptance gate: one test (one pass/fail line under -v) per release
criterion. Criteria 2, 3, and 7 train real models and dominate the runtime;
criterion 8 needs a user-supplied housing CSV and is skipped without one.
"""
import os
import time

import numpy as np
import pytest

from namkit.baselines import fit_full_dnn
from namkit.data import (
    Dataset,
    gen_multitask_synthetic,
    gen_paramgen_synthetic,
    gen_toy_jump,
    paramgen_benefit,
    train_val_split,
)
from namkit.feature_net import FeatureNetConfig, build_feature_net, verify_gradients
from namkit.metrics import mse, pr_auc, roc_auc, rmse
from namkit.model import (
    FeatureMeta,
    build_nam,
    center,
    nam_backward,
    nam_forward,
    nam_loss,
    zero_out_feature,
)
from namkit.multitask import (
    build_multitask,
    build_paramgen,
    mt_backward,
    mt_loss,
)
from namkit.tensor import make_rng
from namkit.training import TrainConfig, net_config_for, train

from test_metrics import pr_auc_sweep, random_case, roc_auc_pairwise


# --- criterion 1 ----------------------------------------------------------

def probe_model_grads(model, total_fn, grads, rng, n_probes,
                      step=1e-5, tol=1e-5, force=()):
    """Central-FD probes of random parameter coordinates.

    Probes that straddle an activation kink (their one-sided slopes
    disagree) are discarded, matching the feature-net checker. Returns
    (count, max_err) over the counted probes; `force` pins a fraction of
    the probes to specific arrays so small heads are always exercised.
    """
    params = model.param_arrays()
    counted, max_err = 0, 0.0
    attempts = 0
    while counted < n_probes and attempts < n_probes * 30:
        attempts += 1
        if force and attempts % 3 == 0:
            i = force[attempts // 3 % len(force)]
        else:
            i = int(rng.integers(len(params)))
        arr = params[i]
        idx = np.unravel_index(int(rng.integers(arr.size)), arr.shape)
        an = float(np.asarray(grads[i])[idx])
        orig = arr[idx]
        arr[idx] = orig + step
        fp = total_fn()
        arr[idx] = orig - step
        fm = total_fn()
        arr[idx] = orig
        fd = (fp - fm) / (2.0 * step)
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        if err >= tol:
            f0 = total_fn()
            right = (fp - f0) / step
            left = (f0 - fm) / step
            if abs(right - left) > 0.01 * max(abs(right), abs(left), 1.0):
                continue  # probe sits on a kink: central FD is undefined there
        counted += 1
        max_err = max(max_err, err)
    return counted, max_err


def test_c1_gradients_match_finite_differences():
    t0 = time.monotonic()
    tol, step = 1e-5, 1e-5

    # both feature-net architectures, full production sizes
    for arch in ("standard", "exu"):
        cfg = FeatureNetConfig(arch=arch)
        net = build_feature_net(cfg, (-1.0, 1.0), make_rng(1), feature_index=0)
        rep = verify_gradients(net, probes=110, tol=tol, rng=make_rng(2),
                               step=step)
        assert rep.probes >= 100, f"{arch}: only {rep.probes} valid probes"
        assert rep.passed, f"{arch}: {rep}"

    small = FeatureNetConfig(arch="standard", hidden_sizes=(24, 16))
    cfg = TrainConfig(output_penalty=0.05, weight_decay=0.01)

    # single-task model, both links
    for link, seed in (("identity", 3), ("logistic", 4)):
        r = make_rng(seed)
        model = build_nam(3, small, [FeatureMeta(f"x{k}", -1, 1)
                                     for k in range(3)], link, r)
        X = r.uniform(-1, 1, size=(16, 3))
        y = (r.random(16) < 0.5).astype(float) if link == "logistic" \
            else r.standard_normal(16)
        _, grads = model.loss_and_grads(X, y, cfg, None)
        total = lambda: model.loss_and_grads(X, y, cfg, None)[0].total
        n, err = probe_model_grads(model, total, grads, make_rng(seed + 10), 110)
        assert n >= 100 and err < tol, f"nam/{link}: {n} probes, max err {err:.2e}"

    # multitask model; force probes onto the mixing weights and task biases
    r = make_rng(5)
    mt = build_multitask(3, 2, 3, small, r, links=["identity", "logistic",
                                                   "identity"])
    X = r.uniform(-1, 1, size=(16, 3))
    Y = np.column_stack([r.standard_normal(16),
                         (r.random(16) < 0.5).astype(float),
                         r.standard_normal(16)])
    _, grads = mt.loss_and_grads(X, Y, cfg, None)
    total = lambda: mt.loss_and_grads(X, Y, cfg, None)[0].total
    head_arrays = (len(mt.param_arrays()) - 2, len(mt.param_arrays()) - 1)
    n, err = probe_model_grads(mt, total, grads, make_rng(15), 110,
                               force=head_arrays)
    assert n >= 100 and err < tol, f"multitask: {n} probes, max err {err:.2e}"

    # treatment model: composed risk head gradients, mix and bias included
    r = make_rng(6)
    pg = build_paramgen(2, 2, 2, small, r)
    Xp = r.uniform(-1, 1, size=(16, 2))
    D = (r.random((16, 2)) < 0.5).astype(float)
    yp = (r.random(16) < 0.5).astype(float)
    XD = np.concatenate([Xp, D], axis=1)
    _, grads = pg.loss_and_grads(XD, yp, cfg, None)
    total = lambda: pg.loss_and_grads(XD, yp, cfg, None)[0].total
    head_arrays = (len(pg.param_arrays()) - 2, len(pg.param_arrays()) - 1)
    n, err = probe_model_grads(pg, total, grads, make_rng(16), 110,
                               force=head_arrays)
    assert n >= 100 and err < tol, f"paramgen: {n} probes, max err {err:.2e}"

    assert time.monotonic() - t0 < 120.0


# --- criterion 2 ----------------------------------------------------------

def test_c2_jump_dataset_needs_exu_units():
    t0 = time.monotonic()
    ds = gen_toy_jump(seed=0)
    floor = float(ds.components["entropy_floor"])
    ces = {}
    for arch in ("exu", "standard"):
        cfg = TrainConfig(lr=0.01, batch=1024, max_epochs=200, patience=200,
                          seed=0)
        model = build_nam(ds.n_features, net_config_for(arch, cfg),
                          ds.feature_meta(), ds.link, make_rng(0))
        model, _ = train(model, (ds.features, ds.targets),
                         (ds.features, ds.targets), cfg)
        ces[arch] = model.eval_task_loss(ds.features, ds.targets)

    assert ces["exu"] <= floor + 0.02, (
        f"exu train CE {ces['exu']:.4f} vs floor {floor:.4f}"
    )
    assert ces["standard"] >= floor + 0.05, (
        f"standard train CE {ces['standard']:.4f} vs floor {floor:.4f}"
    )
    assert time.monotonic() - t0 < 1800.0


# --- criterion 3 ----------------------------------------------------------

def _mtl_stl_trial(seed, cfg):
    tr, te = gen_multitask_synthetic(seed=seed)
    rng = np.random.default_rng(seed)
    n_val = int(np.ceil(tr.n_rows * 0.125))
    perm = rng.permutation(tr.n_rows)
    va_i, tr_i = perm[:n_val], perm[n_val:]
    X_a, Y_a = tr.features[tr_i], tr.targets[tr_i]
    X_v, Y_v = tr.features[va_i], tr.targets[va_i]

    mt = build_multitask(3, 6, 6, net_config_for("standard", cfg),
                         np.random.default_rng(seed + 1))
    mt, _ = train(mt, (X_a, Y_a), (X_v, Y_v), cfg)
    pred = mt.predict(te.features)
    mtl = float(np.mean([mse(pred[:, t], te.targets[:, t]) for t in range(6)]))

    stl_per_task = []
    for t in range(6):
        m = build_nam(3, net_config_for("standard", cfg), tr.feature_meta(),
                      "identity", np.random.default_rng(seed + 10 + t))
        m, _ = train(m, (X_a, Y_a[:, t]), (X_v, Y_v[:, t]), cfg)
        stl_per_task.append(mse(m.predict(te.features), te.targets[:, t]))
    return mtl, float(np.mean(stl_per_task))


def test_c3_multitask_beats_single_task_over_20_trials():
    t0 = time.monotonic()
    cfg = TrainConfig(lr=0.01, weight_decay=1e-5, batch=1024,
                      max_epochs=1000, patience=20, seed=0)
    mtl_scores, stl_scores = [], []
    for seed in range(20):
        mtl, stl = _mtl_stl_trial(seed, cfg)
        mtl_scores.append(mtl)
        stl_scores.append(stl)

    mtl_mean = float(np.mean(mtl_scores))
    stl_mean = float(np.mean(stl_scores))
    wins = sum(m < s for m, s in zip(mtl_scores, stl_scores))
    detail = (f"MTL {mtl_mean:.4f}, STL {stl_mean:.4f}, wins {wins}/20")
    assert 0.69 <= mtl_mean <= 0.82, detail
    assert stl_mean >= mtl_mean + 0.10, detail
    assert wins >= 17, detail
    assert time.monotonic() - t0 < 7200.0


# --- criterion 4 ----------------------------------------------------------

def test_c4_centering_changes_nothing_and_ablation_is_unbiased():
    rng = make_rng(7)
    cfg = FeatureNetConfig(arch="standard", hidden_sizes=(32, 16))
    model = build_nam(4, cfg, [FeatureMeta(f"x{k}", -2, 2) for k in range(4)],
                      "identity", rng)
    X_train = rng.uniform(-2, 2, size=(600, 4))
    X_probe = rng.uniform(-2, 2, size=(1000, 4))

    before = model.predict_logits(X_probe)
    center(model, X_train)
    after = model.predict_logits(X_probe)
    assert float(np.max(np.abs(after - before))) < 1e-10

    contribs, logits, _ = nam_forward(model, X_train)
    assert float(np.max(np.abs(contribs.mean(axis=0)))) < 1e-8

    mean_before = float(logits.mean())
    zero_out_feature(model, 2)
    _, logits_after, _ = nam_forward(model, X_train)
    assert abs(float(logits_after.mean()) - mean_before) < 1e-6


# --- criterion 5 ----------------------------------------------------------

def test_c5_metric_oracles():
    rng = make_rng(8)
    for trial in range(50):
        n = int(rng.integers(5, 301))
        scores, y = random_case(rng, n, ties=trial % 2 == 0)
        assert abs(roc_auc(scores, y) - roc_auc_pairwise(scores, y)) < 1e-12
        assert abs(pr_auc(scores, y) - pr_auc_sweep(scores, y)) < 1e-10

    p = rng.standard_normal(256)
    y = rng.standard_normal(256)
    assert abs(rmse(p, y) ** 2 - mse(p, y)) < 1e-12


# --- criterion 6 ----------------------------------------------------------

def test_c6_multitask_with_one_subnet_one_task_is_a_nam():
    cfg = FeatureNetConfig(arch="standard", hidden_sizes=(16, 8))
    lam1, lam2 = 0.3, 0.02
    for link, seed in (("identity", 9), ("logistic", 10)):
        nam = build_nam(2, cfg, [FeatureMeta(f"x{k}", -1, 1) for k in range(2)],
                        link, make_rng(seed))
        mt = build_multitask(2, 1, 1, cfg, make_rng(seed + 1), links=link)
        mt.mix[:] = 1.0
        for k in range(2):
            for dst, src in zip(mt.subnets[k][0].params(), nam.nets[k].params()):
                dst[...] = src

        r = make_rng(seed + 2)
        X = r.uniform(-1, 1, size=(32, 2))
        y = (r.random(32) < 0.5).astype(float) if link == "logistic" \
            else r.standard_normal(32)

        bd_n, ctx_n = nam_loss(nam, X, y, lam1, lam2, train_mode=True, rng=None)
        bd_m, ctx_m = mt_loss(mt, X, y[:, None], None, lam1, lam2,
                              train_mode=True, rng=None)
        assert abs(bd_n.task_loss - bd_m.task_loss) < 1e-12
        assert abs(bd_n.output_penalty - bd_m.output_penalty) < 1e-12
        assert abs(bd_n.weight_decay - bd_m.weight_decay) < 1e-12
        assert abs(bd_n.total - bd_m.total) < 1e-12

        g_n = nam_backward(nam, ctx_n)
        g_m = mt_backward(mt, ctx_m)
        n_sub = len(g_n) - 1
        for a, b in zip(g_n[:n_sub], g_m[:n_sub]):
            assert float(np.max(np.abs(a - b))) < 1e-12
        assert abs(float(g_n[-1]) - float(g_m[-1][0])) < 1e-12


# --- criterion 7 ----------------------------------------------------------

def test_c7_treatment_benefit_signs_recovered():
    ds = gen_paramgen_synthetic(50_000, seed=0)
    cfg = TrainConfig(lr=0.02, weight_decay=1e-5, batch=1024, max_epochs=150,
                      patience=150, seed=0)
    rng = make_rng(0)
    M = int(ds.components["n_treatments"])
    K = ds.n_features - M
    pg = build_paramgen(K, M, 2, net_config_for("standard", cfg), rng,
                        feature_meta=ds.feature_meta()[:K])
    tr, va = train_val_split(ds, rng)
    pg, _ = train(pg, tr, va, cfg)
    pg.center_on(tr.features)

    xs = np.linspace(0.1, 0.9, 100)  # central 80% of the x range
    for m in range(M):
        learned = np.full(100, float(pg.base.task_bias[m + 1]))
        for s in range(pg.base.n_subnets):
            out, _ = pg.base.subnets[0][s].forward(xs)
            learned += pg.base.mix[m + 1, 0, s] * out[:, 0]
        learned -= pg.base.offsets[m + 1, 0]
        match = float(np.mean(np.sign(learned) == np.sign(paramgen_benefit(m, xs))))
        assert match >= 0.90, f"treatment {m}: sign match {match:.2f}"


# --- criterion 8 (optional: needs a user-supplied housing CSV) --------------

HOUSING_ENV = "NAMKIT_HOUSING_CSV"


@pytest.mark.skipif(HOUSING_ENV not in os.environ,
                    reason=f"set {HOUSING_ENV} to a California-housing CSV "
                           "to run the full-data benchmark")
def test_c8_california_housing_cv_rmse():
    from namkit.data import load_csv
    from namkit.training import cross_validate

    target = os.environ.get("NAMKIT_HOUSING_TARGET", "MedHouseVal")
    ds = load_csv(os.environ[HOUSING_ENV], target, "regression")
    cfg = TrainConfig(lr=0.00674, output_penalty=0.001, weight_decay=1e-6,
                      dropout=0.0, feature_dropout=0.0, batch=1024,
                      max_epochs=1000, patience=20, seed=0)
    report = cross_validate(ds, cfg, folds=5, members=20, metric="rmse",
                            arch="standard")
    assert report.mean <= 0.62, str(report)


# --- criterion 9 ----------------------------------------------------------

def backfit_best_additive_mse(y_grid, iters=200):
    """Best additive approximation on a full product grid: alternate exact
    conditional-mean updates, which is coordinate descent on the residual."""
    G1, G2 = y_grid.shape
    f1, f2 = np.zeros(G1), np.zeros(G2)
    c = y_grid.mean()
    for _ in range(iters):
        f1 = (y_grid - c - f2[None, :]).mean(axis=1)
        f1 -= f1.mean()
        f2 = (y_grid - c - f1[:, None]).mean(axis=0)
        f2 -= f2.mean()
    resid = y_grid - c - f1[:, None] - f2[None, :]
    return float(np.mean(resid ** 2))


def test_c9_additive_floor_on_pure_interaction():
    G = 21
    g = np.linspace(-1.0, 1.0, G)
    A, B = np.meshgrid(g, g, indexing="ij")
    X = np.column_stack([A.ravel(), B.ravel()])
    y = X[:, 0] * X[:, 1]
    floor = backfit_best_additive_mse(y.reshape(G, G))
    ds = Dataset(X, y, ["x1", "x2"], ["y"], "regression")

    cfg = TrainConfig(lr=0.01, weight_decay=1e-4, batch=1024, max_epochs=400,
                      patience=400, seed=0)
    nam = build_nam(2, net_config_for("standard", cfg), ds.feature_meta(),
                    "identity", make_rng(0))
    nam, _ = train(nam, (X, y), (X, y), cfg)
    nam_mse = float(np.mean((nam.predict(X) - y) ** 2))

    dnn_cfg = TrainConfig(lr=0.005, weight_decay=0.0, batch=64,
                          max_epochs=150, patience=150, seed=0)
    dnn, _ = fit_full_dnn(ds, dnn_cfg)
    dnn_mse = float(np.mean((dnn.predict(X) - y) ** 2))

    detail = f"floor {floor:.6f}, nam {nam_mse:.6f}, dnn {dnn_mse:.6f}"
    assert nam_mse <= 1.05 * floor, detail
    assert dnn_mse <= 0.5 * nam_mse, detail
