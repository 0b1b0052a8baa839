"""Dense math kernels: activations, initializers and the exp-centered unit.

All arrays are float64 numpy arrays (row-major). Derivatives are hand-coded
per operation; there is no autodiff graph. Every op is pure given an explicit
``numpy.random.Generator``, so callers own determinism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NumericError, UsageError

__all__ = [
    "Activation",
    "make_rng",
    "child_seeds",
    "affine_forward",
    "affine_backward",
    "exu_forward",
    "exu_backward",
    "init_exu",
    "init_dense",
]


@dataclass(frozen=True)
class Activation:
    """Pointwise activation. ``kind`` is one of relu / relun / identity / sigmoid.

    ``relun`` is a ReLU clipped above at ``n`` (n > 0); it keeps a unit active
    only on a narrow input window, which is what lets exp-centered units model
    sharp local jumps. Subgradient convention: derivative is 0 exactly at the
    kinks z=0 and z=n.
    """

    kind: str
    n: float = 1.0

    def __post_init__(self):
        if self.kind not in ("relu", "relun", "identity", "sigmoid"):
            raise ValueError(f"unknown activation kind: {self.kind!r}")
        if self.kind == "relun" and not self.n > 0:
            raise ValueError("relun cap must be positive")

    def __call__(self, z):
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "relun":
            return np.clip(z, 0.0, self.n)
        if self.kind == "sigmoid":
            return sigmoid(z)
        return z

    def deriv(self, z):
        """Derivative evaluated at pre-activation z."""
        if self.kind == "relu":
            return (z > 0.0).astype(np.float64)
        if self.kind == "relun":
            return ((z > 0.0) & (z < self.n)).astype(np.float64)
        if self.kind == "sigmoid":
            s = sigmoid(z)
            return s * (1.0 - s)
        return np.ones_like(z)

    def region(self, z):
        """Integer code of the linear region each pre-activation lies in.

        Returns None for activations that are smooth everywhere. Two inputs
        with equal codes see the same local affine branch, so a finite
        difference between them cannot straddle a kink.
        """
        if self.kind == "relu":
            return (z > 0.0).astype(np.int8)
        if self.kind == "relun":
            return ((z > 0.0).astype(np.int8) + (z >= self.n).astype(np.int8))
        return None


RELU = Activation("relu")
IDENTITY = Activation("identity")


def sigmoid(z):
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def make_rng(seed) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give identical streams."""
    return np.random.default_rng(seed)


def child_seeds(seed, n) -> list[np.random.SeedSequence]:
    """n independent, reproducible seed sequences derived from one seed."""
    return np.random.SeedSequence(seed).spawn(n)


def affine_forward(x, weights, bias):
    """Dense layer: out[b, h] = sum_i x[b, i] * W[i, h] + bias[h]."""
    x = np.asarray(x, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if x.ndim != 2 or weights.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"affine shapes do not chain: x {x.shape} @ W {weights.shape}"
        )
    if bias.shape != (weights.shape[1],):
        raise DimensionError(f"bias shape {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias


def affine_backward(x, weights, grad_out):
    """Gradients of sum(grad_out * affine_forward) w.r.t. (W, bias, x)."""
    grad_w = x.T @ grad_out
    grad_b = grad_out.sum(axis=0)
    grad_x = grad_out @ weights.T
    return grad_w, grad_b, grad_x


def exu_forward(x, w, b, act=None):
    """Exp-centered hidden units on a scalar feature.

    out[j, h] = act(exp(w[h]) * (x[j] - b[h])). The exp keeps the slope
    e**w large while w itself stays small, which makes very steep local
    ramps cheap to reach during training.

    Returns (out, cache); pass the cache to :func:`exu_backward`.
    """
    if act is None:
        act = Activation("relun", 1.0)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"exu input must be a vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite input to exu_forward")
    ew = np.exp(w)
    z = ew[None, :] * (x[:, None] - b[None, :])
    out = act(z)
    cache = (x, ew, z, act)
    return out, cache


def exu_backward(cache, grad_out):
    """Gradients of sum(grad_out * out) for :func:`exu_forward`.

    dz/dw = z, dz/db = -e**w, dz/dx = e**w, each scaled by act'(z).
    """
    if cache is None:
        raise UsageError("exu_backward needs the cache returned by exu_forward")
    x, ew, z, act = cache
    g = grad_out * act.deriv(z)
    grad_w = (g * z).sum(axis=0)
    grad_b = -(g * ew[None, :]).sum(axis=0)
    grad_x = (g * ew[None, :]).sum(axis=1)
    return grad_x, grad_w, grad_b


def init_exu(rng, fan, feature_range=(-1.0, 1.0)):
    """Initial (w, b) for an exp-centered layer of ``fan`` units.

    Weights are drawn from Normal(mu, 0.5**2) with a single mu drawn
    uniformly from [3, 4] for the whole layer, so e**w starts around 30-50
    and the initial function is jagged. Biases are spread uniformly over the
    feature's observed range so each unit's active window starts inside the
    data support.
    """
    if fan <= 0:
        raise ValueError("fan must be positive")
    lo, hi = feature_range
    mu = rng.uniform(3.0, 4.0)
    w = rng.normal(mu, 0.5, size=fan)
    b = rng.uniform(lo, hi, size=fan)
    return w, b


def init_dense(rng, fan_in, fan_out, scheme="kaiming"):
    """Dense weight matrix of shape (fan_in, fan_out).

    kaiming: Normal(0, 2 / fan_in); xavier: Uniform(+-sqrt(6 / (fan_in + fan_out))).
    """
    if fan_in <= 0 or fan_out <= 0:
        raise ValueError("fans must be positive")
    if scheme == "kaiming":
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
    if scheme == "xavier":
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))
    raise ValueError(f"unknown init scheme: {scheme!r}")
