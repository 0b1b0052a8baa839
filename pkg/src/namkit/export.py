"""Shape-function export: delimited tables plus SVG figures.

Each feature yields one CSV with schema ``x,f_1..f_M,density``: x in original
(pre-standardization) units, one f column per curve (ensemble member, or task
for multitask models, else a single column), and the max-normalized data
density at x. Floats carry 17 significant digits so re-reading the file
reproduces every value exactly.

SVG rendering is deterministic: fixed figure geometry (640x360 per feature),
a fixed hash salt for element ids, and no embedded timestamps, so the same
CSV always renders to byte-identical SVG.
"""

from __future__ import annotations

import csv
import os
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .data import density_histogram
from .errors import DataError, UsageError
from .model import NamEnsemble, NamModel, shape_table
from .multitask import MultitaskNam, ParamGenModel, mt_shape_table

import numpy as np  # noqa: E402

__all__ = ["export_shapes", "write_shape_csv", "read_shape_csv", "plot_shape_svg"]

plt.rcParams["svg.hashsalt"] = "namkit"

DENSITY_BINS = 64


def _safe_name(name):
    out = re.sub(r"[^A-Za-z0-9_.-]+", "_", str(name)).strip("_")
    return out or "feature"


def _curves(model, k, grid):
    """Grid (model units) and one column per curve for feature k."""
    if isinstance(model, NamEnsemble):
        return model.member_shape_tables(k, grid)
    if isinstance(model, ParamGenModel):
        model = model.base
    if isinstance(model, MultitaskNam):
        xs, first = mt_shape_table(model, k, 0, grid)
        cols = [first]
        for t in range(1, model.n_tasks):
            cols.append(mt_shape_table(model, k, t, grid)[1])
        return xs, np.column_stack(cols)
    xs, vals = shape_table(model, k, grid)
    return xs, vals[:, None]


def _density_at(xs_orig, values_orig, bins):
    hist = density_histogram(values_orig, bins=bins)
    idx = np.clip(np.digitize(xs_orig, hist.edges) - 1, 0, hist.counts.size - 1)
    return hist.counts[idx]


def write_shape_csv(path, xs, cols, density):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["x"] + [f"f_{j + 1}" for j in range(cols.shape[1])] + ["density"]
        )
        for i in range(xs.size):
            writer.writerow(
                [f"{xs[i]:.17g}"]
                + [f"{v:.17g}" for v in cols[i]]
                + [f"{density[i]:.17g}"]
            )


def read_shape_csv(path):
    """Parse a shape CSV back into (xs, cols, density)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty shape file")
        if len(header) < 3 or header[0] != "x" or header[-1] != "density":
            raise DataError(f"{path}: expected header x,f_1..f_M,density")
        rows = [[float(c) for c in row] for row in reader]
    table = np.asarray(rows, dtype=np.float64)
    if table.ndim != 2 or table.shape[1] != len(header):
        raise DataError(f"{path}: ragged shape table")
    return table[:, 0], table[:, 1:-1], table[:, -1]


def plot_shape_svg(csv_path, svg_path, title=None):
    """Render one shape CSV to SVG: density bars behind shape curves.

    Plots exactly what the CSV contains, so re-rendering a re-read CSV is
    byte-identical.
    """
    xs, cols, density = read_shape_csv(csv_path)
    if title is None:
        title = os.path.splitext(os.path.basename(csv_path))[0]
        title = re.sub(r"^shape_", "", title)

    fig, ax = plt.subplots(figsize=(6.4, 3.6), dpi=100)
    ax2 = ax.twinx()
    if xs.size > 1:
        width = (xs[-1] - xs[0]) / max(xs.size - 1, 1)
    else:
        width = 1.0
    ax2.bar(xs, density, width=width, color="#f4a6b8", alpha=0.45,
            linewidth=0, zorder=1)
    ax2.set_ylim(0.0, 4.0)  # keep bars in the lower quarter, like axis rugs
    ax2.set_yticks([])

    n_curves = cols.shape[1]
    alpha = 1.0 if n_curves == 1 else max(0.15, 1.0 / np.sqrt(n_curves))
    for j in range(n_curves):
        ax.plot(xs, cols[:, j], color="#1f5fbf", alpha=alpha,
                linewidth=1.4, zorder=2)
    ax.set_zorder(ax2.get_zorder() + 1)
    ax.patch.set_visible(False)
    ax.set_xlabel(title)
    ax.set_ylabel("contribution")
    ax.axhline(0.0, color="#888888", linewidth=0.6, zorder=1)
    fig.tight_layout()
    fig.savefig(svg_path, format="svg", metadata={"Date": None})
    plt.close(fig)


def export_shapes(model, data_features, out_dir, grid=256, svg=False,
                  bins=DENSITY_BINS):
    """Write one CSV (and optionally one SVG) per feature of a centered model.

    data_features must be in original units (raw CSV values or generator
    output); it provides the density column. Returns the written file paths.
    """
    if not getattr(model, "centered", False):
        raise UsageError("export requires a centered model")
    if grid < 2:
        raise UsageError("grid must be at least 2")
    base = model.base if isinstance(model, ParamGenModel) else model
    metas = base.feature_meta
    n_model_features = base.n_features

    data_features = np.asarray(data_features, dtype=np.float64)
    if data_features.ndim != 2 or data_features.shape[1] < n_model_features:
        raise DataError(
            f"need at least {n_model_features} data columns for densities, "
            f"got shape {data_features.shape}"
        )

    os.makedirs(out_dir, exist_ok=True)
    written = []
    for k in range(n_model_features):
        meta = metas[k]
        xs_model, cols = _curves(model, k, grid)
        xs_orig = meta.to_original(xs_model)
        density = _density_at(xs_orig, data_features[:, k], bins)
        stem = os.path.join(out_dir, f"shape_{_safe_name(meta.name)}")
        csv_path = stem + ".csv"
        write_shape_csv(csv_path, xs_orig, cols, density)
        written.append(csv_path)
        if svg:
            svg_path = stem + ".svg"
            plot_shape_svg(csv_path, svg_path, title=meta.name)
            written.append(svg_path)
    return written
