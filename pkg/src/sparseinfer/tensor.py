"""Dense tensor conventions and INT8 quantization arithmetic.

Tensors are plain contiguous numpy arrays in one of four element types
(f32/s8/u8/s32).  Quantization follows the scheme used throughout the
engine: activations are unsigned 8-bit with a per-tensor affine mapping,
weights are signed 8-bit with symmetric per-output-channel scales, and
matmul accumulation happens in signed 32-bit.

Rounding is half-to-even everywhere, and the exact floating-point
expression trees are pinned so that the scalar kernels, the vectorized
reference paths, and the lookup-table builder agree bit for bit:

    quantize:   q   = rint(f64(x) / f64(scale)) + zp, clamped to range
    dequantize: x   = (f32(q) - f32(zp)) * f32(scale)
    requantize: q   = rint(f64(acc) * f64(in_scale) / f64(out_scale)) + zp,
                clamped to range
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class DType(enum.Enum):
    F32 = "f32"
    S8 = "s8"
    U8 = "u8"
    S32 = "s32"

    @property
    def np(self) -> np.dtype:
        return _NP_DTYPES[self]

    @property
    def bounds(self) -> tuple[int, int]:
        """Inclusive (min, max) for the integer dtypes."""
        return _BOUNDS[self]


_NP_DTYPES = {
    DType.F32: np.dtype(np.float32),
    DType.S8: np.dtype(np.int8),
    DType.U8: np.dtype(np.uint8),
    DType.S32: np.dtype(np.int32),
}

_BOUNDS = {
    DType.S8: (-128, 127),
    DType.U8: (0, 255),
    DType.S32: (-(2**31), 2**31 - 1),
}


class Granularity(enum.Enum):
    PER_TENSOR = "per_tensor"
    PER_OUTPUT_CHANNEL = "per_output_channel"


@dataclass(frozen=True)
class QuantParams:
    """Scale/zero-point pair tying an integer tensor to real values.

    ``scale`` is a float32 scalar array for per-tensor params or a 1-D
    float32 array (one entry per output channel) for weight params.
    Weight params are symmetric: ``zero_point`` is always 0.
    """

    scale: np.ndarray
    zero_point: int
    dtype: DType

    def __post_init__(self):
        s = np.asarray(self.scale, dtype=np.float32)
        object.__setattr__(self, "scale", s)
        if not np.all(s > 0):
            raise ValueError("quantization scale must be positive")
        lo, hi = self.dtype.bounds
        if not lo <= self.zero_point <= hi:
            raise ValueError(f"zero_point {self.zero_point} outside {self.dtype}")
        if self.per_channel and self.zero_point != 0:
            raise ValueError("per-channel params must be symmetric (zero_point 0)")

    @property
    def per_channel(self) -> bool:
        return self.scale.ndim == 1

    def scale_scalar(self) -> float:
        if self.per_channel:
            raise ValueError("per-channel params have no scalar scale")
        return float(self.scale)


def compute_quant_params(
    t: np.ndarray,
    granularity: Granularity = Granularity.PER_TENSOR,
    target: DType = DType.U8,
) -> QuantParams:
    """Min/max calibration of affine quantization params for ``t``.

    S8 is symmetric (scale = max|x| / 127, zero point 0); U8 is asymmetric
    (scale = (max - min) / 255, zero point = rint(-min / scale) clamped to
    [0, 255]).  An all-zero input degenerates to scale 1.
    """
    t = np.asarray(t)
    if t.size == 0:
        raise ValueError("cannot calibrate an empty tensor")
    if target not in (DType.S8, DType.U8):
        raise ValueError(f"unsupported quantized dtype {target}")

    if granularity is Granularity.PER_OUTPUT_CHANNEL:
        if target is not DType.S8:
            raise ValueError("per-channel calibration is weight-only (S8)")
        if t.ndim != 2:
            raise ValueError("per-channel calibration expects a 2-D weight")
        amax = np.abs(t).max(axis=1).astype(np.float64)
        scale = amax / 127.0
        scale[scale == 0.0] = 1.0
        return QuantParams(scale.astype(np.float32), 0, DType.S8)

    if target is DType.S8:
        amax = float(np.abs(t).max())
        scale = amax / 127.0 if amax > 0 else 1.0
        return QuantParams(np.float32(scale), 0, DType.S8)

    lo = float(t.min())
    hi = float(t.max())
    # The representable interval must include 0 so that zero_point is valid.
    lo = min(lo, 0.0)
    hi = max(hi, 0.0)
    if hi == lo:
        return QuantParams(np.float32(1.0), 0, DType.U8)
    scale = (hi - lo) / 255.0
    zp = int(np.clip(np.rint(-lo / scale), 0, 255))
    return QuantParams(np.float32(scale), zp, DType.U8)


def quantize(t: np.ndarray, q: QuantParams) -> np.ndarray:
    """f32 -> integer tensor: rint(x / scale) + zero_point, clamped."""
    x = np.asarray(t, dtype=np.float32)
    if q.per_channel:
        if x.ndim != 2 or x.shape[0] != q.scale.shape[0]:
            raise ValueError("per-channel quantize expects rows == channels")
        scale = q.scale.astype(np.float64)[:, None]
    else:
        scale = np.float64(q.scale)
    lo, hi = q.dtype.bounds
    r = np.rint(x.astype(np.float64) / scale) + q.zero_point
    return np.clip(r, lo, hi).astype(q.dtype.np)


def dequantize(t: np.ndarray, q: QuantParams) -> np.ndarray:
    """integer -> f32 tensor: (x - zero_point) * scale."""
    x = np.asarray(t)
    if x.dtype != q.dtype.np:
        raise ValueError(f"tensor dtype {x.dtype} does not match params {q.dtype}")
    if q.per_channel:
        if x.ndim != 2 or x.shape[0] != q.scale.shape[0]:
            raise ValueError("per-channel dequantize expects rows == channels")
        scale = q.scale[:, None]
    else:
        scale = np.float32(q.scale)
    return (x.astype(np.float32) - np.float32(q.zero_point)) * scale


def requantize(acc, in_scale, out: QuantParams):
    """S32 accumulator -> 8-bit output space.

    ``in_scale`` is activation_scale * weight_scale (scalar or per-element
    array matching ``acc``).  Accepts scalars or arrays; returns the same
    shape in ``out.dtype``.
    """
    a = np.asarray(acc, dtype=np.int64)
    lo, hi = out.dtype.bounds
    r = np.rint(a.astype(np.float64) * np.asarray(in_scale, dtype=np.float64)
                / np.float64(out.scale)) + out.zero_point
    r = np.clip(r, lo, hi).astype(out.dtype.np)
    if np.isscalar(acc) or np.ndim(acc) == 0:
        return r[()] if r.ndim == 0 else r
    return r


def wrap_i32(x) -> np.ndarray:
    """Reduce wide integers to wrapping 32-bit two's-complement values."""
    a = np.asarray(x, dtype=np.int64)
    return ((a + 2**31) % 2**32 - 2**31).astype(np.int32)
