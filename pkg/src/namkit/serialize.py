"""Model persistence: a versioned zip container of .npy arrays + JSON meta.

Every float64 parameter round-trips bit-exactly (raw .npy encoding). The
container is written with fixed zip timestamps and sorted JSON keys, so
saving the same model twice produces byte-identical files; artifacts can be
diffed and content-addressed.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict

import numpy as np

from .baselines import LinearModel, MlpModel
from .errors import DataError, UsageError
from .feature_net import DenseLayer, ExuLayer, FeatureNet, FeatureNetConfig
from .model import FeatureMeta, NamEnsemble, NamModel
from .multitask import MultitaskNam, ParamGenModel
from .tensor import Activation

__all__ = ["save_model", "load_model", "FORMAT_NAME", "FORMAT_VERSION"]

FORMAT_NAME = "namkit-model"
FORMAT_VERSION = 1

# fixed zip timestamp: artifacts must not embed wall-clock time
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _npy_bytes(arr):
    buf = io.BytesIO()
    # asarray with order="C", not ascontiguousarray: the latter promotes
    # 0-d arrays (model biases) to shape (1,)
    np.lib.format.write_array(buf, np.asarray(arr, order="C"), version=(1, 0))
    return buf.getvalue()


def _write_container(path, meta, arrays):
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        def add(name, data):
            info = zipfile.ZipInfo(name, date_time=_EPOCH)
            info.external_attr = 0o644 << 16
            zf.writestr(info, data)

        add("meta.json",
            json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))
        for i, arr in enumerate(arrays):
            add(f"arrays/{i:05d}.npy", _npy_bytes(arr))


def _read_container(path):
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            names = sorted(n for n in zf.namelist() if n.startswith("arrays/"))
            arrays = [
                np.lib.format.read_array(io.BytesIO(zf.read(n))) for n in names
            ]
    except FileNotFoundError:
        raise DataError(f"no such model file: {path}")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, ValueError) as exc:
        raise DataError(f"corrupt model file {path}: {exc}")
    if meta.get("format") != FORMAT_NAME:
        raise DataError(f"{path} is not a {FORMAT_NAME} container")
    if meta.get("version", 0) > FORMAT_VERSION:
        raise DataError(
            f"{path} uses container version {meta.get('version')}, "
            f"this build reads up to {FORMAT_VERSION}"
        )
    return meta, arrays


class _Store:
    def __init__(self):
        self.arrays = []

    def put(self, arr):
        self.arrays.append(np.asarray(arr))
        return len(self.arrays) - 1


def _act_meta(act):
    return {"kind": act.kind, "n": act.n}


def _act_from(meta):
    return Activation(meta["kind"], meta["n"])


def _layer_meta(layer, store):
    if isinstance(layer, DenseLayer):
        return {
            "kind": "dense",
            "act": _act_meta(layer.act),
            "w": store.put(layer.weights),
            "b": store.put(layer.bias),
        }
    if isinstance(layer, ExuLayer):
        return {
            "kind": "exu",
            "act": _act_meta(layer.act),
            "w": store.put(layer.w),
            "b": store.put(layer.b),
        }
    raise UsageError(f"cannot serialize layer of type {type(layer).__name__}")


def _layer_from(meta, arrays):
    act = _act_from(meta["act"])
    w, b = arrays[meta["w"]], arrays[meta["b"]]
    if meta["kind"] == "dense":
        return DenseLayer(w, b, act)
    if meta["kind"] == "exu":
        return ExuLayer(w, b, act)
    raise DataError(f"unknown layer kind {meta['kind']!r}")


def _net_meta(net, store):
    cfg = asdict(net.config)
    cfg["hidden_sizes"] = list(cfg["hidden_sizes"])
    return {
        "config": cfg,
        "feature_index": net.feature_index,
        "feature_range": list(net.feature_range),
        "layers": [_layer_meta(l, store) for l in net.layers],
    }


def _net_from(meta, arrays):
    cfg_dict = dict(meta["config"])
    cfg_dict["hidden_sizes"] = tuple(cfg_dict["hidden_sizes"])
    cfg = FeatureNetConfig(**cfg_dict)
    layers = [_layer_from(lm, arrays) for lm in meta["layers"]]
    return FeatureNet(cfg, layers, meta["feature_index"],
                      tuple(meta["feature_range"]))


def _fmeta_meta(fm):
    d = asdict(fm)
    # plain Python types only: numpy scalars are not JSON-serializable
    return {
        "name": str(d["name"]),
        "vmin": float(d["vmin"]),
        "vmax": float(d["vmax"]),
        "mean": float(d["mean"]),
        "scale": float(d["scale"]),
    }


def _fmeta_from(meta):
    return FeatureMeta(**meta)


def _nam_meta(model, store):
    out = {
        "kind": "nam",
        "link": model.link,
        "bias": store.put(model.bias),
        "offsets": store.put(model.offsets),
        "zeroed": store.put(model.zeroed),
        "centered": model.centered,
        "feature_meta": [_fmeta_meta(m) for m in model.feature_meta],
        "nets": [_net_meta(net, store) for net in model.nets],
        "train_contrib_means": (
            None if model.train_contrib_means is None
            else store.put(model.train_contrib_means)
        ),
    }
    return out


def _nam_from(meta, arrays):
    nets = [_net_from(nm, arrays) for nm in meta["nets"]]
    fmeta = [_fmeta_from(m) for m in meta["feature_meta"]]
    model = NamModel(nets, meta["link"], fmeta,
                     bias=float(arrays[meta["bias"]]))
    model.offsets[...] = arrays[meta["offsets"]]
    model.zeroed[...] = arrays[meta["zeroed"]]
    model.centered = meta["centered"]
    if meta["train_contrib_means"] is not None:
        model.train_contrib_means = arrays[meta["train_contrib_means"]]
    return model


def _mt_meta(model, store):
    return {
        "kind": "multitask",
        "links": list(model.links),
        "task_names": list(model.task_names),
        "feature_meta": [_fmeta_meta(m) for m in model.feature_meta],
        "mix": store.put(model.mix),
        "task_bias": store.put(model.task_bias),
        "offsets": store.put(model.offsets),
        "centered": model.centered,
        "subnets": [
            [_net_meta(net, store) for net in row] for row in model.subnets
        ],
    }


def _mt_from(meta, arrays):
    subnets = [[_net_from(nm, arrays) for nm in row] for row in meta["subnets"]]
    fmeta = [_fmeta_from(m) for m in meta["feature_meta"]]
    model = MultitaskNam(subnets, arrays[meta["mix"]], meta["links"], fmeta,
                         task_names=meta["task_names"])
    model.task_bias[...] = arrays[meta["task_bias"]]
    model.offsets[...] = arrays[meta["offsets"]]
    model.centered = meta["centered"]
    return model


def save_model(path, model):
    """Serialize any model kind to a deterministic container file."""
    store = _Store()
    if isinstance(model, NamModel):
        meta = _nam_meta(model, store)
    elif isinstance(model, NamEnsemble):
        meta = {
            "kind": "ensemble",
            "members": [_nam_meta(m, store) for m in model.members],
        }
    elif isinstance(model, ParamGenModel):
        meta = {
            "kind": "paramgen",
            "n_treatments": model.n_treatments,
            "centered": model.centered,
            "base": _mt_meta(model.base, store),
        }
    elif isinstance(model, MultitaskNam):
        meta = _mt_meta(model, store)
    elif isinstance(model, LinearModel):
        meta = {
            "kind": "linear",
            "link": model.link,
            "feature_names": list(model.feature_names),
            "weights": store.put(model.weights),
            "bias": store.put(model.bias),
        }
    elif isinstance(model, MlpModel):
        meta = {
            "kind": "mlp",
            "link": model.link,
            "dropout": model.dropout,
            "layers": [_layer_meta(l, store) for l in model.layers],
        }
    else:
        raise UsageError(f"cannot serialize model of type {type(model).__name__}")
    meta["format"] = FORMAT_NAME
    meta["version"] = FORMAT_VERSION
    _write_container(path, meta, store.arrays)


def load_model(path):
    """Load a container written by :func:`save_model`."""
    meta, arrays = _read_container(path)
    kind = meta.get("kind")
    try:
        if kind == "nam":
            return _nam_from(meta, arrays)
        if kind == "ensemble":
            return NamEnsemble([_nam_from(m, arrays) for m in meta["members"]])
        if kind == "multitask":
            return _mt_from(meta, arrays)
        if kind == "paramgen":
            base = _mt_from(meta["base"], arrays)
            model = ParamGenModel(base, meta["n_treatments"])
            model.centered = meta["centered"]
            return model
        if kind == "linear":
            return LinearModel(arrays[meta["weights"]],
                               float(arrays[meta["bias"]]),
                               meta["link"], meta["feature_names"])
        if kind == "mlp":
            layers = [_layer_from(lm, arrays) for lm in meta["layers"]]
            return MlpModel(layers, meta["link"], meta["dropout"])
    except (KeyError, IndexError, TypeError) as exc:
        raise DataError(f"malformed model meta in {path}: {exc}")
    raise DataError(f"unknown model kind {kind!r} in {path}")
