import numpy as np
import pytest

from namkit.data import density_histogram
from namkit.errors import DataError, UsageError
from namkit.export import export_shapes, plot_shape_svg, read_shape_csv, write_shape_csv
from namkit.feature_net import FeatureNetConfig
from namkit.model import FeatureMeta, NamEnsemble, build_nam, center, shape_table
from namkit.multitask import build_multitask, mt_center, mt_shape_table
from namkit.tensor import make_rng


def small_cfg():
    return FeatureNetConfig(arch="standard", hidden_sizes=(6, 4))


def centered_nam(seed=0, k=2, names=None):
    rng = make_rng(seed)
    names = names or [f"x{j}" for j in range(k)]
    metas = [FeatureMeta(n, -2.0, 2.0, mean=float(j), scale=2.0)
             for j, n in enumerate(names)]
    model = build_nam(k, small_cfg(), metas, "identity", rng)
    center(model, rng.standard_normal((50, k)))
    return model


def test_shape_csv_round_trip_bit_exact(tmp_path):
    rng = make_rng(1)
    xs = np.sort(rng.standard_normal(33))
    cols = rng.standard_normal((33, 2)) * np.array([1e-7, 1e6])
    density = rng.random(33)
    path = tmp_path / "shape_t.csv"
    write_shape_csv(path, xs, cols, density)
    xs2, cols2, dens2 = read_shape_csv(path)
    assert np.array_equal(xs, xs2)
    assert np.array_equal(cols, cols2)
    assert np.array_equal(density, dens2)
    header = path.read_text().splitlines()[0]
    assert header == "x,f_1,f_2,density"


def test_read_shape_csv_validation(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("")
    with pytest.raises(DataError):
        read_shape_csv(p)
    p.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DataError):
        read_shape_csv(p)
    p.write_text("x,f_1,density\n1,2\n")
    with pytest.raises(DataError):
        read_shape_csv(p)


def test_export_requires_centered_model(tmp_path):
    rng = make_rng(2)
    metas = [FeatureMeta("a", -1.0, 1.0)]
    model = build_nam(1, small_cfg(), metas, "identity", rng)
    with pytest.raises(UsageError):
        export_shapes(model, rng.standard_normal((10, 1)), tmp_path)
    center(model, rng.standard_normal((10, 1)))
    with pytest.raises(UsageError):
        export_shapes(model, rng.standard_normal((10, 1)), tmp_path, grid=1)
    with pytest.raises(DataError):
        export_shapes(model, rng.standard_normal((10, 0)), tmp_path)


def test_export_writes_one_csv_per_feature(tmp_path):
    model = centered_nam(seed=3, k=2, names=["age", "bmi score"])
    data = make_rng(4).standard_normal((80, 2)) * 2.0 + np.array([0.0, 1.0])
    written = export_shapes(model, data, tmp_path, grid=16)
    assert [p.split("/")[-1] for p in written] == [
        "shape_age.csv", "shape_bmi_score.csv"
    ]
    xs, cols, density = read_shape_csv(written[0])
    assert xs.shape == (16,) and cols.shape == (16, 1)
    assert density.shape == (16,)
    assert density.max() <= 1.0 and density.min() >= 0.0


def test_export_x_column_is_in_original_units(tmp_path):
    # model units span [-2, 2]; with mean 1 and scale 2 the original-unit
    # x column must span [1 - 4, 1 + 4]
    rng = make_rng(5)
    metas = [FeatureMeta("z", -2.0, 2.0, mean=1.0, scale=2.0)]
    model = build_nam(1, small_cfg(), metas, "identity", rng)
    center(model, rng.standard_normal((30, 1)))
    written = export_shapes(model, rng.standard_normal((30, 1)), tmp_path, grid=8)
    xs, _, _ = read_shape_csv(written[0])
    assert xs[0] == pytest.approx(-3.0)
    assert xs[-1] == pytest.approx(5.0)


def test_export_values_match_shape_table(tmp_path):
    model = centered_nam(seed=6, k=1, names=["v"])
    data = make_rng(7).standard_normal((40, 1))
    written = export_shapes(model, data, tmp_path, grid=12)
    xs, cols, _ = read_shape_csv(written[0])
    grid_model, vals = shape_table(model, 0, 12)
    assert np.array_equal(cols[:, 0], vals)
    assert np.array_equal(xs, model.feature_meta[0].to_original(grid_model))


def test_export_density_matches_histogram_oracle(tmp_path):
    model = centered_nam(seed=8, k=1)
    rng = make_rng(9)
    data = rng.standard_normal((500, 1))
    written = export_shapes(model, data, tmp_path, grid=20, bins=16)
    xs, _, density = read_shape_csv(written[0])
    hist = density_histogram(data[:, 0], bins=16)
    idx = np.clip(np.digitize(xs, hist.edges) - 1, 0, 15)
    assert np.array_equal(density, hist.counts[idx])
    assert density.max() <= 1.0


def test_export_multitask_has_one_column_per_task(tmp_path):
    rng = make_rng(10)
    model = build_multitask(2, 2, 3, small_cfg(), rng)
    mt_center(model, rng.standard_normal((25, 2)))
    written = export_shapes(model, rng.standard_normal((25, 2)), tmp_path, grid=9)
    xs, cols, _ = read_shape_csv(written[0])
    assert cols.shape == (9, 3)
    for t in range(3):
        _, ref = mt_shape_table(model, 0, t, 9)
        assert np.array_equal(cols[:, t], ref)


def test_export_ensemble_has_one_column_per_member(tmp_path):
    members = [centered_nam(seed=s, k=1) for s in (11, 12, 13)]
    ens = NamEnsemble(members)
    data = make_rng(14).standard_normal((30, 1))
    written = export_shapes(ens, data, tmp_path, grid=7)
    _, cols, _ = read_shape_csv(written[0])
    assert cols.shape == (7, 3)
    for j, m in enumerate(members):
        _, ref = shape_table(m, 0, 7)
        assert np.array_equal(cols[:, j], ref)


def test_svg_rendering_is_deterministic(tmp_path):
    model = centered_nam(seed=15, k=1)
    data = make_rng(16).standard_normal((40, 1))
    w1 = export_shapes(model, data, tmp_path / "a", grid=10, svg=True)
    w2 = export_shapes(model, data, tmp_path / "b", grid=10, svg=True)
    svgs1 = [p for p in w1 if p.endswith(".svg")]
    svgs2 = [p for p in w2 if p.endswith(".svg")]
    assert len(svgs1) == 1
    b1 = open(svgs1[0], "rb").read()
    b2 = open(svgs2[0], "rb").read()
    assert b1 == b2
    assert b1.startswith(b"<?xml")


def test_svg_from_reread_csv_is_identical(tmp_path):
    # the SVG is a pure function of the CSV contents
    model = centered_nam(seed=17, k=1)
    data = make_rng(18).standard_normal((40, 1))
    written = export_shapes(model, data, tmp_path, grid=10, svg=True)
    csv_path = written[0]
    svg_a = tmp_path / "again.svg"
    plot_shape_svg(csv_path, svg_a, title=model.feature_meta[0].name)
    assert open(written[1], "rb").read() == svg_a.read_bytes()


def test_safe_name_sanitizes_paths(tmp_path):
    model = centered_nam(seed=19, k=1, names=["weird/name: (mg/dL)"])
    data = make_rng(20).standard_normal((20, 1))
    written = export_shapes(model, data, tmp_path, grid=4)
    fname = written[0].split("/")[-1]
    assert fname == "shape_weird_name_mg_dL.csv"
