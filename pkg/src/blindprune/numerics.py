"""Dense kernels and activation functions with their blind ranges.

Matrices are plain ``numpy`` arrays of dtype float32, row-major, always 2-D.
Products accumulate in float64 and are rounded back to float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError

DTYPE = np.float32

IDENTITY = "identity"
RELU = "relu"
LEAKY_RELU = "leaky_relu"
SIGMOID = "sigmoid"
TANH = "tanh"

ACTIVATION_NAMES = (IDENTITY, RELU, LEAKY_RELU, SIGMOID, TANH)


def as_matrix(x, name="matrix"):
    """Return ``x`` as a contiguous 2-D float32 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite values")
    return arr


def matmul(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return out.astype(DTYPE)


@dataclass(frozen=True)
class Activation:
    """An activation kind. ``slope`` is only meaningful for leaky ReLU."""

    name: str = RELU
    slope: float = 0.01

    def __post_init__(self):
        if self.name not in ACTIVATION_NAMES:
            raise InputError(f"unknown activation {self.name!r}")
        if self.name == LEAKY_RELU and not self.slope > 0:
            raise InputError("leaky ReLU slope must be > 0")

    @classmethod
    def parse(cls, text):
        """Accept CLI spellings like ``leaky-relu`` or ``leaky_relu:0.02``."""
        name, _, slope = text.strip().lower().replace("-", "_").partition(":")
        if name == "leakyrelu":
            name = LEAKY_RELU
        if slope:
            return cls(name, float(slope))
        return cls(name)

    def __str__(self):
        if self.name == LEAKY_RELU:
            return f"{self.name}({self.slope:g})"
        return self.name


def activation_apply(kind: Activation, z):
    z = np.asarray(z)
    if kind.name == IDENTITY:
        return z.copy()
    if kind.name == RELU:
        return np.maximum(z, 0)
    if kind.name == LEAKY_RELU:
        return np.where(z > 0, z, z * z.dtype.type(kind.slope))
    if kind.name == SIGMOID:
        return _sigmoid(z)
    return np.tanh(z)


def activation_grad(kind: Activation, z):
    """Elementwise derivative. ReLU and leaky ReLU use the left derivative at 0."""
    z = np.asarray(z)
    one = z.dtype.type(1)
    if kind.name == IDENTITY:
        return np.ones_like(z)
    if kind.name == RELU:
        return (z > 0).astype(z.dtype)
    if kind.name == LEAKY_RELU:
        return np.where(z > 0, one, z.dtype.type(kind.slope))
    if kind.name == SIGMOID:
        s = _sigmoid(z)
        return s * (one - s)
    t = np.tanh(z)
    return one - t * t


def _sigmoid(z):
    # split on sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1 / (1 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1 + ez)
    return out


EMPTY = "empty"
LEFT_UNBOUNDED = "left_unbounded"
INTERVAL = "interval"


@dataclass(frozen=True)
class BlindRange:
    """Input region where an activation's derivative is (nearly) zero.

    ``mirrored`` marks saturating activations whose blind range also has a
    right tail ``[-upper, +inf)``; only the left tail is stored.
    """

    kind: str
    lower: float = -math.inf
    upper: float = -math.inf
    mirrored: bool = False

    def __post_init__(self):
        if self.kind == INTERVAL and self.lower > self.upper:
            raise InputError("blind range interval needs lower <= upper")

    @classmethod
    def empty(cls):
        return cls(EMPTY)

    @classmethod
    def left_unbounded(cls, upper, mirrored=False):
        return cls(LEFT_UNBOUNDED, -math.inf, float(upper), mirrored)

    @classmethod
    def interval(cls, lower, upper):
        return cls(INTERVAL, float(lower), float(upper))

    def contains(self, z):
        z = np.asarray(z, dtype=np.float64)
        if self.kind == EMPTY:
            return np.zeros(z.shape, dtype=bool)
        inside = (z >= self.lower) & (z <= self.upper)
        if self.mirrored:
            inside |= z >= -self.upper
        return inside

    def __str__(self):
        if self.kind == EMPTY:
            return "empty"
        if self.kind == INTERVAL:
            return f"[{self.lower:g}, {self.upper:g}]"
        text = f"(-inf, {self.upper:g}]"
        if self.mirrored:
            text += f" and [{-self.upper:g}, +inf)"
        return text


def blind_range(kind: Activation, tol: float = 0.0) -> BlindRange:
    """Maximal input region where ``|activation_grad| <= tol``."""
    if tol < 0:
        raise InputError("tol must be >= 0")
    everywhere = BlindRange.interval(-math.inf, math.inf)
    if kind.name == IDENTITY:
        return everywhere if tol >= 1 else BlindRange.empty()
    if kind.name in (RELU, LEAKY_RELU):
        if tol >= 1:
            return everywhere
        floor = 0.0 if kind.name == RELU else kind.slope
        return BlindRange.left_unbounded(0.0) if tol >= floor else BlindRange.empty()
    if tol == 0:
        return BlindRange.empty()
    if kind.name == SIGMOID:
        if tol >= 0.25:
            return everywhere
        # sigma * (1 - sigma) = tol on the left tail
        s = (1 - math.sqrt(1 - 4 * tol)) / 2
        return BlindRange.left_unbounded(math.log(s / (1 - s)), mirrored=True)
    if tol >= 1:
        return everywhere
    # 1 - tanh(z)^2 = tol
    return BlindRange.left_unbounded(-math.atanh(math.sqrt(1 - tol)), mirrored=True)
