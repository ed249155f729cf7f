"""Uniform affine quantization, range observers, bfloat16 emulation and quantizer gradients."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

PER_TENSOR_ASYM = "per_tensor_asymmetric"
PER_CHANNEL_SYM = "per_channel_symmetric"

QMIN, QMAX = -128, 127


class DegenerateRangeError(ValueError):
    pass


def qrange(bits: int = 8) -> tuple[int, int]:
    return -(2 ** (bits - 1)), 2 ** (bits - 1) - 1


@dataclass(frozen=True, eq=False)
class QuantSpec:
    """Scale/zero-point pair for signed ``bits``-bit integers.

    For the per-channel scheme ``scale`` is an array whose shape equals the leading
    (output-channel) dimensions of the tensor it describes.
    """

    scale: np.ndarray | float
    zero_point: int = 0
    bits: int = 8
    scheme: str = PER_TENSOR_ASYM
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        s = np.asarray(self.scale, dtype=np.float64)
        if self.scheme == PER_TENSOR_ASYM:
            s = float(s)
        object.__setattr__(self, "scale", s)
        if np.any(np.asarray(s) <= 0) or not np.all(np.isfinite(s)):
            raise ValueError(f"scale must be positive and finite, got {s}")
        if self.scheme == PER_CHANNEL_SYM and self.zero_point != 0:
            raise ValueError("symmetric specs have zero_point 0")
        if not self.qmin <= self.zero_point <= self.qmax:
            raise ValueError(f"zero_point {self.zero_point} outside [{self.qmin}, {self.qmax}]")

    @property
    def qmin(self) -> int:
        return qrange(self.bits)[0]

    @property
    def qmax(self) -> int:
        return qrange(self.bits)[1]

    @property
    def per_channel(self) -> bool:
        return self.scheme == PER_CHANNEL_SYM

    def scale_for(self, ndim: int):
        """Scale broadcastable against a tensor with ``ndim`` dimensions."""
        s = self.scale
        if np.ndim(s) == 0:
            return s
        return np.reshape(s, np.shape(s) + (1,) * (ndim - np.ndim(s)))

    def __eq__(self, other):
        if not isinstance(other, QuantSpec):
            return NotImplemented
        return (
            self.scheme == other.scheme
            and self.bits == other.bits
            and self.zero_point == other.zero_point
            and np.shape(self.scale) == np.shape(other.scale)
            and np.array_equal(self.scale, other.scale)
        )

    def to_dict(self) -> dict:
        d = {
            "scheme": self.scheme,
            "bits": self.bits,
            "zero_point": int(self.zero_point),
        }
        if self.per_channel:
            d["scales"] = np.asarray(self.scale).ravel().tolist()
            d["channel_shape"] = list(np.shape(self.scale))
        else:
            d["scale"] = float(self.scale)
        if self.alpha is not None:
            d["alpha"], d["beta"] = float(self.alpha), float(self.beta)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "QuantSpec":
        if d["scheme"] == PER_CHANNEL_SYM:
            scale = np.asarray(d["scales"], dtype=np.float64).reshape(d["channel_shape"])
        else:
            scale = d["scale"]
        return cls(scale, int(d["zero_point"]), int(d["bits"]), d["scheme"], d.get("alpha"), d.get("beta"))


@dataclass(frozen=True)
class QuantizedTensor:
    q: np.ndarray
    spec: QuantSpec

    @property
    def shape(self):
        return self.q.shape

    def centered(self) -> np.ndarray:
        """``q - Z`` as float64; exact because the values are small integers."""
        return self.q.astype(np.float64) - self.spec.zero_point


def scale_asym(alpha: float, beta: float, bits: int = 8) -> tuple[float, int]:
    if not beta > alpha:
        raise DegenerateRangeError(f"degenerate range [{alpha}, {beta}]")
    qmin, qmax = qrange(bits)
    s = (beta - alpha) / (2 ** bits - 1)
    z = int(np.clip(np.rint(qmin - alpha / s), qmin, qmax))
    return s, z


def scale_sym(alpha: float, beta: float, bits: int = 8) -> tuple[float, int]:
    m = max(-alpha, beta)
    if not m > 0:
        warnings.warn("all-zero range for symmetric scale; using machine epsilon", stacklevel=2)
        return float(np.finfo(np.float32).eps), 0
    return m / (2 ** (bits - 1) - 1), 0


def asym_spec(alpha: float, beta: float, bits: int = 8, eps: float = 1e-8) -> QuantSpec:
    """Per-tensor asymmetric spec for an observed range.

    The range is stretched to contain zero so that zero stays exactly representable and
    the zero-point lands inside the integer range; a degenerate range is widened by
    ``eps`` with a warning.
    """
    lo, hi = min(alpha, 0.0), max(beta, 0.0)
    if not hi - lo > eps * max(1.0, abs(lo), abs(hi)):
        warnings.warn(f"degenerate activation range [{alpha}, {beta}], widening by {eps}", stacklevel=2)
        lo, hi = lo - eps, hi + eps
    s, z = scale_asym(lo, hi, bits)
    return QuantSpec(s, z, bits, PER_TENSOR_ASYM, alpha, beta)


def weight_spec(w, channel_dims: int = 1, bits: int = 8) -> QuantSpec:
    """Per-channel symmetric spec; the first ``channel_dims`` axes index channels."""
    w = np.asarray(w, dtype=np.float64)
    red = tuple(range(channel_dims, w.ndim))
    m = np.max(np.abs(w), axis=red) if red else np.abs(w)
    _, qmax = qrange(bits)
    tiny = np.finfo(np.float32).eps
    if np.any(m == 0):
        warnings.warn("all-zero weight channel; using machine epsilon scale", stacklevel=2)
    s = np.where(m > 0, m / qmax, tiny)
    return QuantSpec(s, 0, bits, PER_CHANNEL_SYM)


def quantize(r, spec: QuantSpec) -> QuantizedTensor:
    r = np.asarray(r, dtype=np.float64)
    q = np.rint(r / spec.scale_for(r.ndim)) + spec.zero_point
    q = np.clip(q, spec.qmin, spec.qmax)
    return QuantizedTensor(q.astype(np.int8 if spec.bits <= 8 else np.int32), spec)


def dequantize(qt: QuantizedTensor) -> np.ndarray:
    return qt.spec.scale_for(qt.q.ndim) * qt.centered()


def fake_quant(r, spec: QuantSpec) -> np.ndarray:
    return dequantize(quantize(r, spec))


@dataclass
class ObserverState:
    """Min-max moving-average range tracker."""

    momentum: float = 0.9
    alpha: float = 0.0
    beta: float = 0.0
    initialized: bool = False
    count: int = field(default=0, repr=False)

    def __post_init__(self):
        if not 0.0 < self.momentum <= 1.0:
            raise ValueError(f"momentum {self.momentum} outside (0, 1]")


def observe(state: ObserverState, tensor) -> ObserverState:
    t = np.asarray(tensor)
    lo, hi = float(np.min(t)), float(np.max(t))
    return observe_range(state, lo, hi)


def observe_range(state: ObserverState, lo: float, hi: float) -> ObserverState:
    if not state.initialized:
        return ObserverState(state.momentum, lo, hi, True, 1)
    m = state.momentum
    return ObserverState(
        m,
        state.alpha + m * (lo - state.alpha),
        state.beta + m * (hi - state.beta),
        True,
        state.count + 1,
    )


def bf16_round(x) -> np.ndarray:
    """Round to the nearest bfloat16 value (ties to even), returned as float32."""
    f = np.asarray(x, dtype=np.float32)
    u = f.view(np.uint32).astype(np.uint64)
    u = (u + 0x7FFF + ((u >> 16) & 1)) & 0xFFFF0000
    return u.astype(np.uint32).view(np.float32).reshape(f.shape)


def quantizer_grads(r, scale=None, spec: QuantSpec | None = None, n: int | None = None):
    """Straight-through gradient w.r.t. ``r`` and learned-step-size gradient w.r.t. the scale.

    Returns per-element factors ``(d fq / d r, d fq / d S)``. The scale factor carries the
    step-size gradient normaliser ``1 / sqrt(n * qmax)`` where ``n`` defaults to ``r.size``.
    """
    r = np.asarray(r, dtype=np.float64)
    spec = spec if spec is not None else QuantSpec(scale)
    s = spec.scale_for(r.ndim) if scale is None else scale
    z, qmin, qmax = spec.zero_point, spec.qmin, spec.qmax
    u = r / s
    v = np.rint(u) + z
    below, above = v < qmin, v > qmax
    inside = ~(below | above)
    d_r = inside.astype(np.float64)
    d_s = np.where(below, qmin - z, np.where(above, qmax - z, np.rint(u) - u))
    n = r.size if n is None else n
    return d_r, d_s / np.sqrt(n * qmax)
