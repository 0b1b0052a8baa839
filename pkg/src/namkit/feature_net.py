"""Univariate feature subnets.

A feature net maps one scalar feature to its additive contribution. Two
architectures are supported: a stack of standard dense ReLU layers, and a
single wide layer of exp-centered (ExU) units with a capped ReLU, which is
much better at learning locally jumpy shape functions.

Training-time dropout uses inverted scaling (activations divided by keep
probability), so evaluation applies no rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, UsageError
from .tensor import (
    Activation,
    affine_backward,
    affine_forward,
    exu_backward,
    exu_forward,
    init_dense,
    init_exu,
)

__all__ = [
    "FeatureNetConfig",
    "FeatureNet",
    "build_feature_net",
    "verify_gradients",
    "GradCheckReport",
]


@dataclass(frozen=True)
class FeatureNetConfig:
    """Architecture and regularization of one feature subnet.

    arch="standard": dense ReLU layers of ``hidden_sizes`` then a linear head.
    arch="exu": one layer of ``exu_units`` exp-centered units with ReLU capped
    at ``exu_cap``, then a linear head.
    ``dropout`` is the hidden-unit drop rate (lambda_3 in the training loss).
    """

    arch: str = "standard"
    hidden_sizes: tuple = (64, 64, 32)
    exu_units: int = 1024
    exu_cap: float = 1.0
    dropout: float = 0.0
    output_dim: int = 1
    init_scheme: str = "kaiming"

    def __post_init__(self):
        if self.arch not in ("standard", "exu"):
            raise ConfigError(f"unknown arch {self.arch!r}")
        if self.arch == "standard" and (
            len(self.hidden_sizes) == 0 or any(h <= 0 for h in self.hidden_sizes)
        ):
            raise ConfigError("hidden_sizes must be positive")
        if self.arch == "exu" and self.exu_units <= 0:
            raise ConfigError("exu_units must be positive")
        if self.arch == "exu" and not self.exu_cap > 0:
            raise ConfigError("exu_cap must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.output_dim < 1:
            raise ConfigError("output_dim must be >= 1")


class DenseLayer:
    """x @ W + b followed by a pointwise activation."""

    def __init__(self, weights, bias, act):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.act = act

    def params(self):
        return [("W", self.weights), ("b", self.bias)]

    def decayed(self):
        return [self.weights]

    def forward(self, x):
        z = affine_forward(x, self.weights, self.bias)
        return self.act(z), (x, z)

    def backward(self, cache, grad_out):
        x, z = cache
        g_z = grad_out * self.act.deriv(z)
        grad_w, grad_b, grad_x = affine_backward(x, self.weights, g_z)
        return [grad_w, grad_b], grad_x

    def regions(self, cache):
        return self.act.region(cache[1])


class ExuLayer:
    """Exp-centered units over a scalar input; see tensor.exu_forward."""

    def __init__(self, w, b, act):
        self.w = np.asarray(w, dtype=np.float64)
        self.b = np.asarray(b, dtype=np.float64)
        self.act = act

    def params(self):
        return [("w", self.w), ("b", self.b)]

    def decayed(self):
        return [self.w]

    def forward(self, x):
        # accepts (B, 1) from the shared layer loop
        out, cache = exu_forward(np.ravel(x), self.w, self.b, self.act)
        return out, cache

    def backward(self, cache, grad_out):
        grad_x, grad_w, grad_b = exu_backward(cache, grad_out)
        return [grad_w, grad_b], grad_x[:, None]

    def regions(self, cache):
        z = cache[2]
        return self.act.region(z)


class FeatureNet:
    """One univariate subnet f_k. Built by :func:`build_feature_net`."""

    def __init__(self, config, layers, feature_index=0, feature_range=(-1.0, 1.0)):
        self.config = config
        self.layers = layers
        self.feature_index = feature_index
        self.feature_range = tuple(float(v) for v in feature_range)

    def params(self):
        """Parameter arrays in a fixed traversal order (mutated in place)."""
        return [arr for layer in self.layers for _, arr in layer.params()]

    def param_names(self):
        return [
            f"layer{i}.{name}"
            for i, layer in enumerate(self.layers)
            for name, _ in layer.params()
        ]

    def decayed_params(self):
        """Weight arrays subject to L2 decay (biases excluded)."""
        return [arr for layer in self.layers for arr in layer.decayed()]

    def forward(self, x, train_mode=False, rng=None, reuse_masks=None):
        """Map a feature column x (shape (B,)) to (out (B, output_dim), cache).

        The cache is returned only in train mode; it is required by
        :meth:`backward`. ``reuse_masks`` replays previously drawn dropout
        masks, which keeps finite-difference probes deterministic.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionError(f"feature input must be 1-d, got {x.shape}")
        rate = self.config.dropout
        if train_mode and rate > 0.0 and rng is None and reuse_masks is None:
            raise UsageError("train-mode forward with dropout needs an rng")

        h = x[:, None]
        layer_caches = []
        masks = []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h, cache = layer.forward(h)
            layer_caches.append(cache)
            if i < last:
                mask = None
                if train_mode and rate > 0.0:
                    if reuse_masks is not None:
                        mask = reuse_masks[i]
                    else:
                        keep = rng.random(h.shape) >= rate
                        mask = keep / (1.0 - rate)
                    h = h * mask
                masks.append(mask)
        if not train_mode:
            return h, None
        return h, {"layers": layer_caches, "masks": masks}

    def backward(self, cache, grad_out):
        """Gradients of sum_b <grad_out[b], out[b]> w.r.t. every parameter.

        Returns a list aligned with :meth:`params`.
        """
        if cache is None:
            raise UsageError("backward needs the cache from a train-mode forward")
        grad_out = np.asarray(grad_out, dtype=np.float64)
        layer_caches = cache["layers"]
        masks = cache["masks"]
        grads = [None] * len(self.layers)
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            if i < len(self.layers) - 1 and masks[i] is not None:
                g = g * masks[i]
            grads[i], g = self.layers[i].backward(layer_caches[i], g)
        return [arr for layer_grads in grads for arr in layer_grads]

    def activation_regions(self, cache):
        """Per-layer linear-region codes of the cached pre-activations.

        Entries are None for layers whose activation is smooth everywhere.
        """
        return [layer.regions(c) for layer, c in zip(self.layers, cache["layers"])]


def build_feature_net(cfg, feature_range, rng, feature_index=0):
    """Construct and initialize a feature net for one feature.

    ``feature_range`` is the feature's observed (min, max) in training data;
    exp-centered biases are spread over it.
    """
    if not isinstance(cfg, FeatureNetConfig):
        raise ConfigError("cfg must be a FeatureNetConfig")
    lo, hi = feature_range
    if not lo <= hi:
        raise ConfigError(f"feature range is inverted: ({lo}, {hi})")

    layers = []
    if cfg.arch == "standard":
        fan_in = 1
        for h in cfg.hidden_sizes:
            w = init_dense(rng, fan_in, h, cfg.init_scheme)
            layers.append(DenseLayer(w, np.zeros(h), Activation("relu")))
            fan_in = h
    else:
        w, b = init_exu(rng, cfg.exu_units, (lo, hi))
        layers.append(ExuLayer(w, b, Activation("relun", cfg.exu_cap)))
        fan_in = cfg.exu_units
    w_out = init_dense(rng, fan_in, cfg.output_dim, cfg.init_scheme)
    layers.append(DenseLayer(w_out, np.zeros(cfg.output_dim), Activation("identity")))
    return FeatureNet(cfg, layers, feature_index, (lo, hi))


@dataclass
class GradCheckReport:
    """Max relative finite-difference error per layer."""

    per_layer: dict = field(default_factory=dict)
    probes: int = 0
    tol: float = 1e-5

    @property
    def passed(self):
        return all(err < self.tol for err in self.per_layer.values())

    @property
    def failed_layers(self):
        return sorted(name for name, err in self.per_layer.items() if err >= self.tol)

    def __str__(self):
        lines = [f"gradient check: {self.probes} probes, tol {self.tol:g}"]
        for name in sorted(self.per_layer):
            err = self.per_layer[name]
            status = "ok" if err < self.tol else "FAIL"
            lines.append(f"  {name}: max rel err {err:.3e} [{status}]")
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def verify_gradients(net, probes=100, tol=1e-5, rng=None, step=1e-5, batch=8):
    """Check analytic parameter gradients against central finite differences.

    Probes random parameter coordinates of ``net``. A probe is discarded when
    the two perturbed evaluations land in different linear regions of some
    piecewise activation: the secant then straddles a kink and does not
    estimate the one-sided derivative the backward pass uses.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    report = GradCheckReport(probes=probes, tol=tol)
    if probes == 0:
        return report

    lo, hi = net.feature_range
    x = rng.uniform(lo, hi, size=batch)
    g_out = rng.standard_normal((batch, net.config.output_dim))
    params = net.params()
    names = net.param_names()

    out, cache = net.forward(x, train_mode=True, rng=rng)
    masks = cache["masks"]
    analytic = net.backward(cache, g_out)
    base_regions = net.activation_regions(cache)

    def objective():
        o, c = net.forward(x, train_mode=True, rng=None, reuse_masks=masks)
        return float((g_out * o).sum()), c

    def straddles_kink(c_plus, c_minus):
        r_plus = net.activation_regions(c_plus)
        r_minus = net.activation_regions(c_minus)
        for rb, rp, rm in zip(base_regions, r_plus, r_minus):
            if rb is None:
                continue
            if not (np.array_equal(rb, rp) and np.array_equal(rb, rm)):
                return True
        return False

    done = 0
    attempts = 0
    while done < probes and attempts < probes * 20:
        attempts += 1
        i = int(rng.integers(len(params)))
        arr = params[i]
        flat = int(rng.integers(arr.size))
        idx = np.unravel_index(flat, arr.shape)
        orig = arr[idx]

        arr[idx] = orig + step
        f_plus, c_plus = objective()
        arr[idx] = orig - step
        f_minus, c_minus = objective()
        arr[idx] = orig

        if straddles_kink(c_plus, c_minus):
            continue

        fd = (f_plus - f_minus) / (2.0 * step)
        an = float(analytic[i][idx])
        err = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        layer = names[i].split(".")[0]
        report.per_layer[layer] = max(report.per_layer.get(layer, 0.0), err)
        done += 1

    report.probes = done
    return report
