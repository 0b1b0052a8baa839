"""Datasets: CSV ingestion, preprocessing, splits, and synthetic generators.

CSV format: UTF-8, comma-separated, one header row, decimal-point floats,
empty field = missing value. Categorical features must be integer-encoded
upstream. Floats are written with 17 significant digits so a write/read
round trip preserves every finite float64 exactly.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DataError, UsageError
from .model import FeatureMeta
from .tensor import make_rng

__all__ = [
    "Dataset",
    "load_csv",
    "write_csv",
    "Preprocessor",
    "preprocess",
    "train_val_split",
    "kfold_split",
    "DensityHistogram",
    "density_histogram",
    "bernoulli_entropy",
    "gen_toy_jump",
    "gen_multitask_synthetic",
    "mt_task_components",
    "gen_paramgen_synthetic",
    "paramgen_baseline",
    "paramgen_benefit",
    "PARAMGEN_BENEFIT_COEFFS",
]

TASK_KINDS = ("classification", "regression")


@dataclass
class Dataset:
    """Feature matrix with one or more targets.

    targets has shape (B,) for a single task and (B, T) for multitask data.
    components carries generator-side extras (sampled probabilities,
    noise-free targets) used by test oracles; row subsets drop it.
    """

    features: np.ndarray
    targets: np.ndarray
    feature_names: list[str]
    target_names: list[str]
    task_kind: str
    components: dict = field(default_factory=dict)
    preprocessor: "Preprocessor | None" = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.targets = np.asarray(self.targets, dtype=np.float64)
        if self.features.ndim != 2:
            raise DataError("features must be a (B, K) matrix")
        if self.features.shape[1] != len(self.feature_names):
            raise DataError("one name per feature column is required")
        if self.targets.shape[0] != self.features.shape[0]:
            raise DataError("features and targets row counts differ")
        if self.task_kind not in TASK_KINDS:
            raise ConfigError(f"task_kind must be one of {TASK_KINDS}")

    @property
    def n_rows(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    @property
    def link(self):
        return "logistic" if self.task_kind == "classification" else "identity"

    def stats(self):
        """Per-feature (min, max, mean, std) over rows with observed values."""
        out = []
        for k in range(self.n_features):
            col = self.features[:, k]
            obs = col[np.isfinite(col)]
            if obs.size == 0:
                out.append((np.nan, np.nan, np.nan, np.nan))
            else:
                out.append((float(obs.min()), float(obs.max()),
                            float(obs.mean()), float(obs.std())))
        return out

    def feature_meta(self):
        """FeatureMeta per column; original-units transform comes from the
        attached preprocessor when present."""
        metas = []
        for k, (vmin, vmax, _, _) in enumerate(self.stats()):
            mean, scale = 0.0, 1.0
            if self.preprocessor is not None:
                mean = float(self.preprocessor.means[k])
                scale = float(self.preprocessor.scales[k])
            metas.append(FeatureMeta(self.feature_names[k], vmin, vmax,
                                     mean=mean, scale=scale))
        return metas

    def subset(self, idx):
        return Dataset(
            self.features[idx], self.targets[idx],
            list(self.feature_names), list(self.target_names), self.task_kind,
            components={}, preprocessor=self.preprocessor,
        )


def load_csv(path, target_columns, task_kind):
    """Read a CSV file into a Dataset; empty cells become NaN (missing).

    target_columns may be a single column name or a list of names. A missing
    value in a target cell is an error; features may be missing and are later
    imputed by :class:`Preprocessor`.
    """
    if isinstance(target_columns, str):
        target_columns = [target_columns]
    if not os.path.exists(path):
        raise DataError(f"no such data file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected a header row")
        header = [h.strip() for h in header]
        for t in target_columns:
            if t not in header:
                raise DataError(f"{path}: target column {t!r} not in header")
        rows = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {i} has {len(row)} cells, expected {len(header)}"
                )
            vals = []
            for name, cell in zip(header, row):
                cell = cell.strip()
                if cell == "":
                    vals.append(np.nan)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: row {i}, column {name!r}: "
                        f"unparseable value {cell!r}"
                    )
            rows.append(vals)

    table = np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header))
    t_idx = [header.index(t) for t in target_columns]
    f_idx = [j for j in range(len(header)) if j not in t_idx]
    targets = table[:, t_idx]
    if np.any(np.isnan(targets)):
        b, t = np.argwhere(np.isnan(targets))[0]
        raise DataError(
            f"{path}: missing target value at row {b + 2}, "
            f"column {target_columns[t]!r}"
        )
    if len(target_columns) == 1:
        targets = targets[:, 0]
    return Dataset(
        table[:, f_idx], targets,
        [header[j] for j in f_idx], list(target_columns), task_kind,
    )


def _fmt(v):
    if np.isnan(v):
        return ""
    return f"{v:.17g}"


def write_csv(path, ds):
    """Write a Dataset back to CSV; NaN becomes an empty cell."""
    targets = ds.targets if ds.targets.ndim == 2 else ds.targets[:, None]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(ds.feature_names) + list(ds.target_names))
        for b in range(ds.n_rows):
            writer.writerow(
                [_fmt(v) for v in ds.features[b]]
                + [_fmt(v) for v in targets[b]]
            )


class Preprocessor:
    """Mean imputation followed by standardization, fit on training rows only.

    Missing entries take the column's observed training mean; columns are then
    shifted/scaled to zero mean and unit std under the training distribution.
    A constant column gets scale 1 so it maps to all zeros. The inverse
    transform (for plot axes in original units) is x_orig = z * scale + mean.
    """

    def __init__(self):
        self.means = None
        self.scales = None

    def fit(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise UsageError("fit needs a non-empty (B, K) matrix")
        for k in range(X.shape[1]):
            if not np.any(np.isfinite(X[:, k])):
                raise DataError(f"feature column {k} has no observed values")
        means = np.nanmean(X, axis=0)
        imputed = np.where(np.isnan(X), means[None, :], X)
        stds = imputed.std(axis=0)
        self.means = means
        self.scales = np.where(stds > 0.0, stds, 1.0)
        return self

    def transform(self, X):
        if self.means is None:
            raise UsageError("transform before fit")
        X = np.asarray(X, dtype=np.float64)
        imputed = np.where(np.isnan(X), self.means[None, :], X)
        return (imputed - self.means[None, :]) / self.scales[None, :]

    def inverse_transform(self, Z):
        if self.means is None:
            raise UsageError("inverse_transform before fit")
        return np.asarray(Z, dtype=np.float64) * self.scales[None, :] + \
            self.means[None, :]

    def apply(self, ds):
        """Transformed copy of a Dataset, with this preprocessor attached."""
        return replace(ds, features=self.transform(ds.features),
                       components=dict(ds.components), preprocessor=self)


def preprocess(ds, train_ds=None):
    """Fit on train_ds (default: ds itself) and transform ds."""
    prep = Preprocessor().fit((train_ds or ds).features)
    return prep.apply(ds)


def train_val_split(ds, rng, val_fraction=0.125):
    """Seeded row split; validation gets ceil(B * fraction), at least 1 row."""
    B = ds.n_rows
    if B < 2:
        raise UsageError("need at least 2 rows to split")
    n_val = min(B - 1, max(1, int(np.ceil(B * val_fraction))))
    perm = rng.permutation(B)
    return ds.subset(perm[n_val:]), ds.subset(perm[:n_val])


def kfold_split(n_or_ds, k, seed=0):
    """k disjoint index folds from a seeded permutation, sizes within 1."""
    B = n_or_ds if isinstance(n_or_ds, (int, np.integer)) else n_or_ds.n_rows
    if k < 1:
        raise UsageError("k must be at least 1")
    if k > B:
        raise UsageError(f"cannot split {B} rows into {k} folds")
    perm = make_rng(seed).permutation(B)
    return [fold for fold in np.array_split(perm, k)]


@dataclass
class DensityHistogram:
    """Max-normalized histogram: counts in [0, 1], the fullest bin at 1."""

    edges: np.ndarray
    counts: np.ndarray


def density_histogram(values, bins=64):
    """Equal-width histogram over [min, max], counts divided by the max."""
    values = np.asarray(values, dtype=np.float64)
    values = values[np.isfinite(values)]
    if values.size == 0:
        raise UsageError("density of no values is undefined")
    if bins < 1:
        raise UsageError("bins must be at least 1")
    counts, edges = np.histogram(values, bins=bins)
    counts = counts.astype(np.float64)
    return DensityHistogram(edges, counts / counts.max())


def bernoulli_entropy(p):
    """H(p) in nats, elementwise; H(0) = H(1) = 0."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    inside = (p > 0.0) & (p < 1.0)
    q = p[inside]
    out[inside] = -q * np.log(q) - (1.0 - q) * np.log1p(-q)
    return out


def gen_toy_jump(seed=0, n_grid=100, labels_per_point=100):
    """Noisy step-like binary dataset over an even grid on [-1, 1].

    Each grid point x gets its own success probability p_x drawn uniformly
    from [0.1, 0.9), fixed across that point's labels, then labels_per_point
    Bernoulli(p_x) labels. The sampled p_x (and the implied mean Bernoulli
    entropy, the lowest cross-entropy any predictor can reach) are recorded
    in components for oracle checks.
    """
    rng = make_rng(seed)
    grid = np.linspace(-1.0, 1.0, n_grid)
    p = rng.uniform(0.1, 0.9, size=n_grid)
    labels = rng.binomial(1, p[:, None], size=(n_grid, labels_per_point))
    x = np.repeat(grid, labels_per_point)
    y = labels.reshape(-1).astype(np.float64)
    floor = float(bernoulli_entropy(p).mean())
    return Dataset(
        x[:, None], y, ["x"], ["y"], "classification",
        components={
            "grid": grid,
            "p": p,
            "p_row": np.repeat(p, labels_per_point),
            "entropy_floor": floor,
        },
    )


def mt_task_components(X, log_fn=np.log):
    """Noise-free pieces of the six synthetic tasks.

    f(x0) = log(100 x0 + 101) / 3, g(x1) = -(4/3) exp(-4 |x1|),
    h(x2) = sin(10 x2), i(x2) = cos(15 x2). Returns (components, targets)
    where targets[:, t] follows the fixed task table (every task shares
    f + g; tasks differ in their +-h, +-i, +-(h+i) term).
    """
    X = np.asarray(X, dtype=np.float64)
    f = log_fn(100.0 * X[:, 0] + 101.0) / 3.0
    g = -(4.0 / 3.0) * np.exp(-4.0 * np.abs(X[:, 1]))
    h = np.sin(10.0 * X[:, 2])
    i = np.cos(15.0 * X[:, 2])
    base = f + g
    clean = np.column_stack([
        base + h,
        base + i,
        base - h,
        base - i,
        base + (h + i),
        base - (h + i),
    ])
    return {"f": f, "g": g, "h": h, "i": i}, clean


def gen_multitask_synthetic(n_train=2500, n_test=10000, seed=0,
                            noise_std=5.0 / 6.0, log_fn=np.log):
    """Six-task synthetic regression pair (train, test).

    Inputs are Uniform[-1, 1]^3; each task's target is its noise-free value
    plus independent N(0, noise_std^2) noise. noise_std defaults to 5/6 and
    log_fn to the natural log. Noise-free targets and the component values
    ride along in components for the additive-identity oracle.
    """
    rng = make_rng(seed)
    names = [f"task_{t}" for t in range(6)]

    def make(n):
        X = rng.uniform(-1.0, 1.0, size=(n, 3))
        comps, clean = mt_task_components(X, log_fn)
        Y = clean + rng.normal(0.0, noise_std, size=clean.shape)
        return Dataset(
            X, Y, ["x0", "x1", "x2"], names, "regression",
            components={"clean": clean, **comps},
        )

    return make(n_train), make(n_test)


# benefit_m(x) = c0 + c1 * x on the severity feature x in [0, 1]
PARAMGEN_BENEFIT_COEFFS = ((-0.5, 1.0), (-0.3, 0.8), (0.2, -0.3))
PARAMGEN_BASELINE_COEFFS = (-1.0, 2.0)


def paramgen_baseline(x):
    """Untreated risk logit of the synthetic treatment generator."""
    c0, c1 = PARAMGEN_BASELINE_COEFFS
    return c0 + c1 * np.asarray(x, dtype=np.float64)


def paramgen_benefit(m, x):
    """True benefit logit of treatment m; sign flips along x for m=0, 2."""
    if not 0 <= m < len(PARAMGEN_BENEFIT_COEFFS):
        raise IndexError(f"treatment index {m} out of range")
    c0, c1 = PARAMGEN_BENEFIT_COEFFS[m]
    return c0 + c1 * np.asarray(x, dtype=np.float64)


def gen_paramgen_synthetic(n, M=3, seed=0):
    """Binary-outcome treatment dataset with known benefit functions.

    One severity feature x ~ Uniform[0, 1]; M treatment indicators drawn
    Bernoulli(1/2) independently; outcome y ~ Bernoulli(sigmoid(logit)) with
    logit = baseline(x) + sum_m d_m benefit_m(x). Feature columns are
    [x, d_0..d_{M-1}] so the matrix feeds ParamGenModel directly.
    """
    if not 1 <= M <= len(PARAMGEN_BENEFIT_COEFFS):
        raise ConfigError(
            f"M must be in [1, {len(PARAMGEN_BENEFIT_COEFFS)}], got {M}"
        )
    rng = make_rng(seed)
    x = rng.uniform(0.0, 1.0, size=n)
    D = (rng.random((n, M)) < 0.5).astype(np.float64)
    logit = paramgen_baseline(x)
    for m in range(M):
        logit = logit + D[:, m] * paramgen_benefit(m, x)
    p = 1.0 / (1.0 + np.exp(-logit))
    y = (rng.random(n) < p).astype(np.float64)
    features = np.column_stack([x, D])
    names = ["x"] + [f"d_{m}" for m in range(M)]
    return Dataset(
        features, y, names, ["y"], "classification",
        components={"logit": logit, "p": p, "n_treatments": M},
    )
