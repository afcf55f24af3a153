"""INT8 sparse-weight x dense-activation GEMM.

The execution path mirrors the unsigned-times-signed 8-bit dot-product
primitive: per 4-row group and 64-wide activation panel it consumes one
16-byte weight micro-tile at a time, gathers the 4 activation rows named
by the tile's column indices, and accumulates 4x64 S32 partial sums with
wrapping arithmetic.  ``spmm_ref`` is the plain nested-loop oracle over
the decoded dense weight; ``spmm_exec`` must match it bit for bit.

Activations arrive as a [NUM_BN, K, BN] relayout of the logical [K, N]
matrix (zero-filled N tail) so threads can partition along panels without
sharing output cache lines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..sparse import Sparse4x1Weight, decode_sparse
from ..tensor import DType, wrap_i32
from .epilogue import (
    EpilogueProgram,
    _gelu_scalar,
    _run_chain,
    build_program,
    empty_sides,
)

DEFAULT_BN = 64


def raw_program(sw: Sparse4x1Weight, a_zp: int = 0) -> EpilogueProgram:
    """Epilogue that emits the wrapped S32 accumulator unchanged."""
    return build_program(sw.scales, 1.0, a_zp, None)


@dataclass(frozen=True)
class ActivationLayout:
    """[NUM_BN, K, BN] u8 panels of a [K, N] activation, zero-filled tail."""

    data: np.ndarray
    k: int
    n: int
    bn: int

    @property
    def num_bn(self) -> int:
        return self.data.shape[0]


@njit(cache=True, nogil=True)
def _fill_panels_kn(a, a3, n, bn):
    num_bn, k = a3.shape[0], a3.shape[1]
    for b in range(num_bn):
        n0 = b * bn
        nw = min(bn, n - n0)
        for kk in range(k):
            for j in range(nw):
                a3[b, kk, j] = a[kk, n0 + j]
            for j in range(nw, bn):
                a3[b, kk, j] = 0


@njit(cache=True, nogil=True)
def _fill_panels_nk(x, a3, n, bn):
    num_bn, k = a3.shape[0], a3.shape[1]
    for b in range(num_bn):
        n0 = b * bn
        nw = min(bn, n - n0)
        for j in range(nw):
            row = x[n0 + j]
            for kk in range(k):
                a3[b, kk, j] = row[kk]
        for j in range(nw, bn):
            for kk in range(k):
                a3[b, kk, j] = 0


def relayout_activation(a: np.ndarray, bn: int = DEFAULT_BN,
                        out: np.ndarray | None = None) -> ActivationLayout:
    """Relayout a [K, N] u8 activation into panels."""
    a = np.ascontiguousarray(a, dtype=np.uint8)
    k, n = a.shape
    if n == 0:
        raise ValueError("N must be positive")
    num_bn = -(-n // bn)
    if out is None:
        out = np.empty((num_bn, k, bn), dtype=np.uint8)
    _fill_panels_kn(a, out, n, bn)
    return ActivationLayout(out, k, n, bn)


def relayout_tokens(x: np.ndarray, bn: int = DEFAULT_BN,
                    out: np.ndarray | None = None) -> ActivationLayout:
    """Relayout a token-major [N, K] u8 activation into panels."""
    x = np.ascontiguousarray(x, dtype=np.uint8)
    n, k = x.shape
    if n == 0:
        raise ValueError("N must be positive")
    num_bn = -(-n // bn)
    if out is None:
        out = np.empty((num_bn, k, bn), dtype=np.uint8)
    _fill_panels_nk(x, out, n, bn)
    return ActivationLayout(out, k, n, bn)


@dataclass(frozen=True)
class SpmmPlan:
    """Immutable execution plan for one sparse linear layer."""

    weight: Sparse4x1Weight
    n: int
    bn: int                    # activation panel width == n_block
    num_bn: int
    threads: int
    tasks: tuple               # ((g0, g1, b0, b1), ...) disjoint cover
    comp: np.ndarray           # int32 [M]: per-row weight sums
    bias: np.ndarray           # int32 [M]
    program: EpilogueProgram

    m_block = 4
    k_block = 4

    @property
    def n_block(self) -> int:
        return self.bn

    @property
    def m(self) -> int:
        return self.weight.logical_rows


def partition_tasks(groups: int, num_bn: int, threads: int) -> tuple:
    """Disjoint (group-range, panel-range) cells, panels split first."""
    def split(total, parts):
        parts = max(1, min(parts, total))
        base, rem = divmod(total, parts)
        out = []
        lo = 0
        for i in range(parts):
            hi = lo + base + (1 if i < rem else 0)
            out.append((lo, hi))
            lo = hi
        return out

    if num_bn >= threads:
        return tuple((0, groups, b0, b1) for b0, b1 in split(num_bn, threads))
    g_parts = max(1, threads // num_bn)
    group_ranges = split(groups, g_parts)
    tasks = []
    for b0, b1 in split(num_bn, num_bn):
        for g0, g1 in group_ranges:
            tasks.append((g0, g1, b0, b1))
    return tuple(tasks)


def plan_spmm(
    sw: Sparse4x1Weight,
    n: int,
    threads: int = 1,
    program: EpilogueProgram | None = None,
    bias: np.ndarray | None = None,
    bn: int = DEFAULT_BN,
) -> SpmmPlan:
    """Build the execution plan: tiling, thread partition, compensation."""
    if n <= 0:
        raise ValueError("N must be positive")
    if threads < 1:
        raise ValueError("threads must be >= 1")
    if bn % 16 != 0 or bn < 16:
        raise ValueError("n_block must be a positive multiple of 16")
    if program is None:
        program = raw_program(sw)
    if program.m != sw.logical_rows:
        raise ValueError("program channel count must match weight rows")
    if bias is None:
        bias = np.zeros(sw.logical_rows, dtype=np.int32)
    bias = np.ascontiguousarray(bias, dtype=np.int32)
    if bias.shape != (sw.logical_rows,):
        raise ValueError("bias must be one s32 per logical output row")
    num_bn = -(-n // bn)
    tasks = partition_tasks(sw.groups, num_bn, threads)
    return SpmmPlan(
        weight=sw, n=n, bn=bn, num_bn=num_bn, threads=threads, tasks=tasks,
        comp=sw.row_sums(), bias=bias, program=program,
    )


@njit(cache=True, nogil=True, inline="always")
def _acc_group_panel(acc, a3, b, p0, p1, group_ptr, idx, vals, bn):
    for r in range(4):
        for j in range(bn):
            acc[r, j] = 0
    for t in range(p0, p1, 4):
        vb = t * 4
        for c in range(4):
            w0 = np.int32(vals[vb + c])
            w1 = np.int32(vals[vb + 4 + c])
            w2 = np.int32(vals[vb + 8 + c])
            w3 = np.int32(vals[vb + 12 + c])
            if w0 == 0 and w1 == 0 and w2 == 0 and w3 == 0:
                continue
            arow = a3[b, idx[t + c]]
            for j in range(bn):
                av = np.int32(arow[j])
                acc[0, j] += w0 * av
                acc[1, j] += w1 * av
                acc[2, j] += w2 * av
                acc[3, j] += w3 * av


@njit(cache=True, nogil=True)
def _spmm_task_int(g0, g1, b0, b1, group_ptr, idx, vals, a3, n_total,
                   m_logical, comp, bias, a_zp, scale_in, ops, fparams,
                   iparams, luts, sides, chans, out_u8):
    bn = a3.shape[2]
    acc = np.empty((4, bn), np.int32)
    for b in range(b0, b1):
        n0 = b * bn
        nw = min(bn, n_total - n0)
        for g in range(g0, g1):
            _acc_group_panel(acc, a3, b, group_ptr[g], group_ptr[g + 1],
                             group_ptr, idx, vals, bn)
            for r in range(4):
                m = g * 4 + r
                if m >= m_logical:
                    break
                adj = bias[m] - np.int32(a_zp) * comp[m]
                for j in range(nw):
                    a32 = acc[r, j] + adj
                    xi, xf = _run_chain(a32, m, n0 + j, scale_in, ops,
                                        fparams, iparams, luts, sides, chans)
                    out_u8[n0 + j, m] = np.uint8(xi & 0xFF)


@njit(cache=True, nogil=True)
def _spmm_task_f32(g0, g1, b0, b1, group_ptr, idx, vals, a3, n_total,
                   m_logical, comp, bias, a_zp, scale_in, ops, fparams,
                   iparams, luts, sides, chans, out_f32):
    bn = a3.shape[2]
    acc = np.empty((4, bn), np.int32)
    for b in range(b0, b1):
        n0 = b * bn
        nw = min(bn, n_total - n0)
        for g in range(g0, g1):
            _acc_group_panel(acc, a3, b, group_ptr[g], group_ptr[g + 1],
                             group_ptr, idx, vals, bn)
            for r in range(4):
                m = g * 4 + r
                if m >= m_logical:
                    break
                adj = bias[m] - np.int32(a_zp) * comp[m]
                for j in range(nw):
                    a32 = acc[r, j] + adj
                    xi, xf = _run_chain(a32, m, n0 + j, scale_in, ops,
                                        fparams, iparams, luts, sides, chans)
                    out_f32[n0 + j, m] = xf


@njit(cache=True, nogil=True)
def _spmm_task_s32(g0, g1, b0, b1, group_ptr, idx, vals, a3, n_total,
                   m_logical, comp, bias, a_zp, out_s32):
    bn = a3.shape[2]
    acc = np.empty((4, bn), np.int32)
    for b in range(b0, b1):
        n0 = b * bn
        nw = min(bn, n_total - n0)
        for g in range(g0, g1):
            _acc_group_panel(acc, a3, b, group_ptr[g], group_ptr[g + 1],
                             group_ptr, idx, vals, bn)
            for r in range(4):
                m = g * 4 + r
                if m >= m_logical:
                    break
                adj = bias[m] - np.int32(a_zp) * comp[m]
                for j in range(nw):
                    out_s32[n0 + j, m] = acc[r, j] + adj


def spmm_exec(
    plan: SpmmPlan,
    act: ActivationLayout,
    pool=None,
    sides: np.ndarray | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Run the tiled kernel; bit-identical to ``spmm_ref``.

    ``pool`` is an injected thread-pool handle (see runtime.ThreadPool);
    None runs the task list inline.  ``sides`` is the packed f32
    [n_sides, N, M] residual stack required by the epilogue program.
    """
    sw = plan.weight
    if act.k != sw.cols or act.n != plan.n or act.bn != plan.bn:
        raise ValueError("activation layout does not match the plan")
    prog = plan.program
    m = sw.logical_rows
    if sides is None:
        sides = empty_sides(plan.n, m)
    sides = np.ascontiguousarray(sides, dtype=np.float32)
    if sides.shape[0] < prog.n_sides:
        raise ValueError(f"program needs {prog.n_sides} side inputs")
    if out is None:
        out = np.empty((plan.n, m), dtype=prog.out_dtype.np)
    elif out.shape != (plan.n, m) or out.dtype != prog.out_dtype.np:
        raise ValueError("bad output buffer")

    if prog.out_dtype is DType.S32:
        def run(task):
            g0, g1, b0, b1 = task
            _spmm_task_s32(g0, g1, b0, b1, sw.group_ptr, sw.idx, sw.vals,
                           act.data, plan.n, m, plan.comp, plan.bias,
                           prog.a_zp, out)
    else:
        kernel = _spmm_task_f32 if prog.out_dtype is DType.F32 else _spmm_task_int
        out_view = out if prog.out_dtype is DType.F32 else out.view(np.uint8)

        def run(task):
            g0, g1, b0, b1 = task
            kernel(g0, g1, b0, b1, sw.group_ptr, sw.idx, sw.vals,
                   act.data, plan.n, m, plan.comp, plan.bias, prog.a_zp,
                   prog.scale_in, prog.ops, prog.fparams, prog.iparams,
                   prog.luts, sides, prog.chans, out_view)

    if pool is None or len(plan.tasks) == 1:
        for task in plan.tasks:
            run(task)
    else:
        pool.run(run, plan.tasks)
    return out


@njit(cache=True, nogil=True)
def _ref_gemm_acc(wd, a, comp, bias, a_zp, out_acc):
    mm, kk = wd.shape
    nn = a.shape[1]
    row = np.empty(nn, np.int32)
    for m in range(mm):
        for j in range(nn):
            row[j] = 0
        for k in range(kk):
            w = np.int32(wd[m, k])
            for j in range(nn):
                row[j] += w * np.int32(a[k, j])
        adj = bias[m] - np.int32(a_zp) * comp[m]
        for j in range(nn):
            out_acc[m, j] = row[j] + adj


def _apply_program_numpy(acc: np.ndarray, prog: EpilogueProgram,
                         sides: np.ndarray) -> np.ndarray:
    """Vectorized epilogue mirror used by the oracle (acc is [M, N])."""
    from .eltwise import gelu_f32
    from .epilogue import (OP_ADD_CHAN, OP_ADD_SIDE, OP_DEQ, OP_DEQ_ACC,
                           OP_GELU, OP_LUT, OP_QUANT, OP_REQUANT)

    xi = None
    xf = None
    for s in range(prog.ops.shape[0]):
        op = int(prog.ops[s])
        if op == OP_REQUANT:
            r = np.rint(acc.astype(np.float64)
                        * prog.scale_in.astype(np.float64)[:, None]
                        / np.float64(prog.fparams[s]))
            r = r + np.float64(prog.iparams[s, 0])
            r = np.clip(r, prog.iparams[s, 1], prog.iparams[s, 2])
            xi = r.astype(np.int32)
        elif op == OP_LUT:
            key = xi + 128 if prog.iparams[s, 1] == 1 else xi
            table = prog.luts[prog.iparams[s, 0]]
            v = table[key]
            xi = v.view(np.int8).astype(np.int32) if prog.iparams[s, 2] == 1 \
                else v.astype(np.int32)
        elif op == OP_DEQ:
            xf = ((xi.astype(np.float32) - np.float32(prog.iparams[s, 0]))
                  * np.float32(prog.fparams[s]))
        elif op == OP_GELU:
            xf = gelu_f32(xf)
        elif op == OP_ADD_SIDE:
            xf = xf + sides[prog.iparams[s, 0]].T
        elif op == OP_ADD_CHAN:
            xf = xf + prog.chans[prog.iparams[s, 0]][:, None]
        elif op == OP_QUANT:
            r = np.rint(xf.astype(np.float64) / np.float64(prog.fparams[s]))
            r = r + np.float64(prog.iparams[s, 0])
            r = np.clip(r, prog.iparams[s, 1], prog.iparams[s, 2])
            xi = r.astype(np.int32)
        elif op == OP_DEQ_ACC:
            xf = (acc.astype(np.float64)
                  * prog.scale_in.astype(np.float64)[:, None]).astype(np.float32)
    if prog.out_dtype is DType.S32:
        return acc.T.copy()
    if prog.out_dtype is DType.F32:
        return np.ascontiguousarray(xf.T)
    return np.ascontiguousarray(xi.T.astype(prog.out_dtype.np))


def spmm_ref(
    sw: Sparse4x1Weight,
    a: np.ndarray,
    program: EpilogueProgram | None = None,
    bias: np.ndarray | None = None,
    sides: np.ndarray | None = None,
) -> np.ndarray:
    """Scalar oracle: dense nested loops over the decoded weight.

    ``a`` is the logical [K, N] u8 activation.  Output is [N, M] in the
    program's output dtype, identical in every bit to ``spmm_exec``.
    """
    a = np.ascontiguousarray(a, dtype=np.uint8)
    if a.ndim != 2 or a.shape[0] != sw.cols:
        raise ValueError(f"activation rows must equal K={sw.cols}")
    if program is None:
        program = raw_program(sw)
    if bias is None:
        bias = np.zeros(sw.logical_rows, dtype=np.int32)
    bias = np.ascontiguousarray(bias, dtype=np.int32)
    wd = decode_sparse(sw)
    comp = wrap_i32(wd.astype(np.int64).sum(axis=1))
    acc = np.empty((sw.logical_rows, a.shape[1]), dtype=np.int32)
    _ref_gemm_acc(wd, a, comp, bias, np.int32(program.a_zp), acc)
    if sides is None:
        sides = empty_sides(a.shape[1], sw.logical_rows)
    return _apply_program_numpy(acc, program, np.ascontiguousarray(sides, np.float32))


def dot4_accum(a4, b4, acc: int) -> int:
    """Contract of the 4-wide u8 x s8 dot-product step: exact products,
    wrapping 32-bit accumulation."""
    total = int(acc)
    for x, y in zip(a4, b4):
        xv, yv = int(x), int(y)
        if not (0 <= xv <= 255 and -128 <= yv <= 127):
            raise ValueError("dot4 operands out of u8/s8 range")
        total += xv * yv
    return int(wrap_i32(total))
