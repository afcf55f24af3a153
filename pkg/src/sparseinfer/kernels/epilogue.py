"""Compiled per-element epilogue programs for the GEMM kernels.

A program starts from the wrapped S32 accumulator (bias and zero-point
compensation already applied) and runs a short opcode sequence per output
element: requantize into the layer's 8-bit output space, optional lookup
tables, dequantize, f32 element-wise ops, residual adds, and a final
quantize.  The same interpreter runs inside the scalar oracle, the tiled
sparse kernel, and the dense baseline, so all paths share one set of
rounding points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ..tensor import DType, QuantParams

OP_REQUANT = 0   # s32 acc -> int8 space at the layer's output params
OP_LUT = 1       # int -> int via a 256-entry table
OP_DEQ = 2       # int -> f32 at given params
OP_GELU = 3      # f32 tanh-approximation GELU
OP_ADD_SIDE = 4  # f32 += side tensor element (residual input)
OP_ADD_CHAN = 5  # f32 += per-output-channel constant
OP_QUANT = 6     # f32 -> int at given params
OP_DEQ_ACC = 7   # s32 acc -> f32 directly (no intermediate 8-bit step)

_MAX_IPARAMS = 3


@dataclass
class EpilogueProgram:
    """Opcode arrays plus the layer's per-channel combined input scale."""

    scale_in: np.ndarray            # f32 [M]: act_scale * weight_scale[m]
    a_zp: int                       # activation zero point (compensation)
    ops: np.ndarray                 # int32 [L]
    fparams: np.ndarray             # f32  [L]
    iparams: np.ndarray             # int32 [L, 3]
    luts: np.ndarray                # uint8 [n_luts, 256] raw table bytes
    chans: np.ndarray               # f32  [n_chans, M]
    out_dtype: DType
    n_sides: int = 0

    @property
    def m(self) -> int:
        return self.scale_in.shape[0]


def _empty_luts() -> np.ndarray:
    return np.zeros((0, 256), dtype=np.uint8)


def _empty_chans(m: int) -> np.ndarray:
    return np.zeros((0, m), dtype=np.float32)


def build_program(
    w_scales: np.ndarray,
    act_scale: float,
    act_zp: int,
    out_q: QuantParams | None,
    steps: list[tuple] = (),
) -> EpilogueProgram:
    """Assemble an epilogue program.

    ``out_q`` gives the layer's own requantization target; None means the
    accumulator is emitted raw (S32) when ``steps`` is empty, or handed to
    the f32 stage directly via a ("dequantize_acc",) first step.

    Steps, applied in order after the requantize:
      ("lut", table_bytes_u8_256, in_dtype, out_dtype)
      ("dequantize", QuantParams)
      ("gelu",)
      ("add_side", side_index)
      ("add_channel", f32_vector)
      ("quantize", QuantParams)
      ("dequantize_acc",)   only as the first step, with out_q None
    """
    w_scales = np.asarray(w_scales, dtype=np.float32).reshape(-1)
    m = w_scales.shape[0]
    scale_in = (np.float64(act_scale) * w_scales.astype(np.float64)).astype(np.float32)

    ops: list[int] = []
    fp: list[float] = []
    ip: list[tuple[int, int, int]] = []
    luts: list[np.ndarray] = []
    chans: list[np.ndarray] = []
    n_sides = 0
    state = "s32"

    if out_q is not None:
        lo, hi = out_q.dtype.bounds
        ops.append(OP_REQUANT)
        fp.append(out_q.scale_scalar())
        ip.append((out_q.zero_point, lo, hi))
        state = "s8" if out_q.dtype is DType.S8 else "u8"
        out_dtype = out_q.dtype
    else:
        out_dtype = DType.S32

    for step in steps:
        kind = step[0]
        if kind == "dequantize_acc":
            if state != "s32" or ops:
                raise ValueError("dequantize_acc must be the only entry step")
            ops.append(OP_DEQ_ACC)
            fp.append(0.0)
            ip.append((0, 0, 0))
            state = "f32"
            out_dtype = DType.F32
        elif kind == "lut":
            if state not in ("s8", "u8"):
                raise ValueError("lut step needs an 8-bit integer state")
            table, in_dt, out_dt = step[1], step[2], step[3]
            table = np.asarray(table, dtype=np.uint8).reshape(256)
            ops.append(OP_LUT)
            fp.append(0.0)
            ip.append((len(luts), 1 if in_dt is DType.S8 else 0,
                       1 if out_dt is DType.S8 else 0))
            luts.append(table)
            state = "s8" if out_dt is DType.S8 else "u8"
            out_dtype = out_dt
        elif kind == "dequantize":
            if state not in ("s8", "u8"):
                raise ValueError("dequantize step needs an integer state")
            q: QuantParams = step[1]
            ops.append(OP_DEQ)
            fp.append(q.scale_scalar())
            ip.append((q.zero_point, 0, 0))
            state = "f32"
            out_dtype = DType.F32
        elif kind == "gelu":
            if state != "f32":
                raise ValueError("gelu needs an f32 state")
            ops.append(OP_GELU)
            fp.append(0.0)
            ip.append((0, 0, 0))
        elif kind == "add_side":
            if state != "f32":
                raise ValueError("add_side needs an f32 state")
            ops.append(OP_ADD_SIDE)
            fp.append(0.0)
            ip.append((int(step[1]), 0, 0))
            n_sides = max(n_sides, int(step[1]) + 1)
        elif kind == "add_channel":
            if state != "f32":
                raise ValueError("add_channel needs an f32 state")
            vec = np.asarray(step[1], dtype=np.float32).reshape(-1)
            if vec.shape[0] != m:
                raise ValueError("per-channel vector length must equal M")
            ops.append(OP_ADD_CHAN)
            fp.append(0.0)
            ip.append((len(chans), 0, 0))
            chans.append(vec)
        elif kind == "quantize":
            if state != "f32":
                raise ValueError("quantize needs an f32 state")
            q = step[1]
            lo, hi = q.dtype.bounds
            ops.append(OP_QUANT)
            fp.append(q.scale_scalar())
            ip.append((q.zero_point, lo, hi))
            state = "s8" if q.dtype is DType.S8 else "u8"
            out_dtype = q.dtype
        else:
            raise ValueError(f"unknown epilogue step {kind!r}")

    return EpilogueProgram(
        scale_in=scale_in,
        a_zp=int(act_zp),
        ops=np.asarray(ops, dtype=np.int32),
        fparams=np.asarray(fp, dtype=np.float32),
        iparams=np.asarray(ip, dtype=np.int32).reshape(-1, _MAX_IPARAMS),
        luts=np.stack(luts) if luts else _empty_luts(),
        chans=np.stack(chans) if chans else _empty_chans(m),
        out_dtype=out_dtype,
        n_sides=n_sides,
    )


def requant_program(w_scales, act_q: QuantParams, out_q: QuantParams | None):
    """The common case: plain requantization (or raw S32 when out_q=None)."""
    return build_program(w_scales, float(act_q.scale), act_q.zero_point, out_q)


@njit(cache=True, inline="always")
def _gelu_scalar(x):
    xd = np.float64(x)
    t = 0.7978845608028654 * (xd + 0.044715 * xd * xd * xd)
    return np.float32(0.5 * xd * (1.0 + math.tanh(t)))


@njit(cache=True, inline="always")
def _quant_scalar(x_f64, scale_f64, zp, lo, hi):
    q = np.rint(x_f64 / scale_f64) + np.float64(zp)
    if q < lo:
        q = np.float64(lo)
    if q > hi:
        q = np.float64(hi)
    return np.int32(q)


@njit(cache=True, inline="always")
def _run_chain(acc, m, n, scale_in, ops, fparams, iparams, luts, sides, chans):
    """Interpret the opcode program for one output element.

    Returns (int_state, f32_state); the caller knows from the program's
    declared output dtype which one is live.
    """
    xi = np.int32(0)
    xf = np.float32(0.0)
    for s in range(ops.shape[0]):
        op = ops[s]
        if op == OP_REQUANT:
            q = np.rint(np.float64(acc) * np.float64(scale_in[m])
                        / np.float64(fparams[s]))
            q += np.float64(iparams[s, 0])
            lo = np.float64(iparams[s, 1])
            hi = np.float64(iparams[s, 2])
            if q < lo:
                q = lo
            if q > hi:
                q = hi
            xi = np.int32(q)
        elif op == OP_LUT:
            key = xi + np.int32(128) if iparams[s, 1] == 1 else xi
            b = luts[iparams[s, 0], key]
            if iparams[s, 2] == 1:
                xi = np.int32(np.int8(b))
            else:
                xi = np.int32(b)
        elif op == OP_DEQ:
            xf = (np.float32(xi) - np.float32(iparams[s, 0])) * fparams[s]
        elif op == OP_GELU:
            xf = _gelu_scalar(xf)
        elif op == OP_ADD_SIDE:
            xf = xf + sides[iparams[s, 0], n, m]
        elif op == OP_ADD_CHAN:
            xf = xf + chans[iparams[s, 0], m]
        elif op == OP_QUANT:
            xi = _quant_scalar(np.float64(xf), np.float64(fparams[s]),
                               iparams[s, 0], iparams[s, 1], iparams[s, 2])
        elif op == OP_DEQ_ACC:
            xf = np.float32(np.float64(acc) * np.float64(scale_in[m]))
    return xi, xf


def empty_sides(n: int, m: int) -> np.ndarray:
    return np.zeros((0, n, m), dtype=np.float32)


def pack_sides(sides, n: int, m: int) -> np.ndarray:
    """Stack residual side inputs into the f32 [n_sides, N, M] kernel form."""
    if not sides:
        return empty_sides(n, m)
    out = np.empty((len(sides), n, m), dtype=np.float32)
    for i, s in enumerate(sides):
        out[i] = np.asarray(s, dtype=np.float32).reshape(n, m)
    return out
