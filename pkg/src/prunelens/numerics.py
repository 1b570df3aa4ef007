"""Dense numeric kernels: softmax, normalization, cosine, Pearson.

All functions are pure, run their reductions in numpy's fixed index order,
and are safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DegenerateDataError

RMS_EPS_DEFAULT = 1e-6
LAYER_EPS_DEFAULT = 1e-5


@dataclass(frozen=True)
class NormKind:
    """Pre-head normalization flavor: rms (no centering) or layer (centered)."""

    kind: str = "rms"
    epsilon: float = field(default=-1.0)

    def __post_init__(self):
        if self.kind not in ("rms", "layer"):
            raise ArgumentError(f"unknown norm kind {self.kind!r}")
        if self.epsilon < 0:
            default = RMS_EPS_DEFAULT if self.kind == "rms" else LAYER_EPS_DEFAULT
            object.__setattr__(self, "epsilon", default)
        if self.epsilon <= 0:
            raise ArgumentError("epsilon must be positive")


def softmax(v) -> np.ndarray:
    """Stable softmax with max-subtraction; preserves argument order."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ArgumentError("softmax requires a nonempty 1-d vector")
    shifted = v - np.max(v)
    e = np.exp(shifted)
    return e / np.sum(e)


def normalize(x, gain, kind: NormKind, bias=None) -> np.ndarray:
    """RMS or layer normalization with elementwise gain.

    rms:   x * gain / sqrt(mean(x^2) + eps)
    layer: (x - mean(x)) * gain / sqrt(var(x) + eps) + bias
    """
    x = np.asarray(x, dtype=np.float64)
    gain = np.asarray(gain, dtype=np.float64)
    if x.shape[-1] != gain.shape[-1] or gain.ndim != 1:
        raise ArgumentError("x and gain must share their last dimension")
    if kind.kind == "rms":
        scale = np.sqrt(np.mean(np.square(x), axis=-1, keepdims=True) + kind.epsilon)
        out = x * gain / scale
    else:
        mu = np.mean(x, axis=-1, keepdims=True)
        var = np.mean(np.square(x - mu), axis=-1, keepdims=True)
        out = (x - mu) * gain / np.sqrt(var + kind.epsilon)
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape[-1] != x.shape[-1]:
            raise ArgumentError("bias length must match x")
        out = out + bias
    return out


def cosine(a, b) -> float:
    """Cosine similarity; zero-norm inputs return 0 by convention.

    The 0 sentinel keeps dead activations from injecting NaN into block
    influence sums (they then contribute the maximal 1 - 0 dissimilarity
    after clipping).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise ArgumentError("cosine requires two equal-length nonempty vectors")
    na2 = float(np.dot(a, a))
    nb2 = float(np.dot(b, b))
    if na2 == 0.0 or nb2 == 0.0:
        return 0.0
    # single sqrt keeps cos(x, x) == 1.0 exactly: sqrt(d*d) rounds to d
    return float(np.dot(a, b) / np.sqrt(na2 * nb2))


def pearson(x, y) -> float:
    """Sample Pearson correlation; raises on constant input instead of NaN."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ArgumentError("pearson requires two equal-length vectors")
    if x.size < 3:
        raise ArgumentError("pearson requires at least 3 points")
    dx = x - np.mean(x)
    dy = y - np.mean(y)
    sx = np.sqrt(np.dot(dx, dx))
    sy = np.sqrt(np.dot(dy, dy))
    if sx == 0.0 or sy == 0.0:
        raise DegenerateDataError("pearson undefined for constant input")
    return float(np.dot(dx, dy) / (sx * sy))
