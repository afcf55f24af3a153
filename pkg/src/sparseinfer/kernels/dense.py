"""Dense INT8 GEMM baseline.

Same math and epilogue as the sparse path but reading every weight, so
sparse-vs-dense timings compare like for like.  The weight is packed once
into [group][K][4] order (4 output rows interleaved per K step) to match
the sparse kernel's register blocking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..tensor import DType, wrap_i32
from .epilogue import EpilogueProgram, _run_chain, build_program, empty_sides
from .spmm import DEFAULT_BN, ActivationLayout, partition_tasks


@dataclass(frozen=True)
class DenseGemmPlan:
    w_pack: np.ndarray         # int8 [groups, K, 4]
    m: int                     # logical rows
    k: int
    n: int
    bn: int
    num_bn: int
    threads: int
    tasks: tuple
    comp: np.ndarray           # int32 [M]
    bias: np.ndarray           # int32 [M]
    program: EpilogueProgram

    @property
    def groups(self) -> int:
        return self.w_pack.shape[0]


def plan_dense_gemm(
    w: np.ndarray,
    n: int,
    threads: int = 1,
    program: EpilogueProgram | None = None,
    bias: np.ndarray | None = None,
    bn: int = DEFAULT_BN,
) -> DenseGemmPlan:
    w = np.ascontiguousarray(w, dtype=np.int8)
    if w.ndim != 2:
        raise ValueError("weight must be 2-D")
    if n <= 0:
        raise ValueError("N must be positive")
    m, k = w.shape
    groups = -(-m // 4)
    padded = np.zeros((groups * 4, k), dtype=np.int8)
    padded[:m] = w
    w_pack = np.ascontiguousarray(padded.reshape(groups, 4, k).transpose(0, 2, 1))
    if program is None:
        program = build_program(np.ones(m, np.float32), 1.0, 0, None)
    if bias is None:
        bias = np.zeros(m, dtype=np.int32)
    bias = np.ascontiguousarray(bias, dtype=np.int32)
    num_bn = -(-n // bn)
    return DenseGemmPlan(
        w_pack=w_pack, m=m, k=k, n=n, bn=bn, num_bn=num_bn, threads=threads,
        tasks=partition_tasks(groups, num_bn, threads),
        comp=wrap_i32(w.astype(np.int64).sum(axis=1)), bias=bias,
        program=program,
    )


@njit(cache=True, nogil=True, inline="always")
def _dense_acc_panel(acc, a3, b, wg, k, bn):
    for r in range(4):
        for j in range(bn):
            acc[r, j] = 0
    for kk in range(k):
        w0 = np.int32(wg[kk, 0])
        w1 = np.int32(wg[kk, 1])
        w2 = np.int32(wg[kk, 2])
        w3 = np.int32(wg[kk, 3])
        arow = a3[b, kk]
        for j in range(bn):
            av = np.int32(arow[j])
            acc[0, j] += w0 * av
            acc[1, j] += w1 * av
            acc[2, j] += w2 * av
            acc[3, j] += w3 * av


@njit(cache=True, nogil=True)
def _dense_task_int(g0, g1, b0, b1, w_pack, a3, k, n_total, m_logical, comp,
                    bias, a_zp, scale_in, ops, fparams, iparams, luts, sides,
                    chans, out_u8):
    bn = a3.shape[2]
    acc = np.empty((4, bn), np.int32)
    for b in range(b0, b1):
        n0 = b * bn
        nw = min(bn, n_total - n0)
        for g in range(g0, g1):
            _dense_acc_panel(acc, a3, b, w_pack[g], k, bn)
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
def _dense_task_f32(g0, g1, b0, b1, w_pack, a3, k, n_total, m_logical, comp,
                    bias, a_zp, scale_in, ops, fparams, iparams, luts, sides,
                    chans, out_f32):
    bn = a3.shape[2]
    acc = np.empty((4, bn), np.int32)
    for b in range(b0, b1):
        n0 = b * bn
        nw = min(bn, n_total - n0)
        for g in range(g0, g1):
            _dense_acc_panel(acc, a3, b, w_pack[g], k, bn)
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
def _dense_task_s32(g0, g1, b0, b1, w_pack, a3, k, n_total, m_logical, comp,
                    bias, a_zp, out_s32):
    bn = a3.shape[2]
    acc = np.empty((4, bn), np.int32)
    for b in range(b0, b1):
        n0 = b * bn
        nw = min(bn, n_total - n0)
        for g in range(g0, g1):
            _dense_acc_panel(acc, a3, b, w_pack[g], k, bn)
            for r in range(4):
                m = g * 4 + r
                if m >= m_logical:
                    break
                adj = bias[m] - np.int32(a_zp) * comp[m]
                for j in range(nw):
                    out_s32[n0 + j, m] = acc[r, j] + adj


def dense_gemm_exec(plan: DenseGemmPlan, act: ActivationLayout, pool=None,
                    sides: np.ndarray | None = None,
                    out: np.ndarray | None = None) -> np.ndarray:
    """Run the planned dense baseline over a relayouted activation."""
    if act.k != plan.k or act.n != plan.n or act.bn != plan.bn:
        raise ValueError("activation layout does not match the plan")
    prog = plan.program
    if sides is None:
        sides = empty_sides(plan.n, plan.m)
    sides = np.ascontiguousarray(sides, dtype=np.float32)
    if out is None:
        out = np.empty((plan.n, plan.m), dtype=prog.out_dtype.np)

    if prog.out_dtype is DType.S32:
        def run(task):
            g0, g1, b0, b1 = task
            _dense_task_s32(g0, g1, b0, b1, plan.w_pack, act.data, plan.k,
                            plan.n, plan.m, plan.comp, plan.bias, prog.a_zp, out)
    else:
        kernel = _dense_task_f32 if prog.out_dtype is DType.F32 else _dense_task_int
        out_view = out if prog.out_dtype is DType.F32 else out.view(np.uint8)

        def run(task):
            g0, g1, b0, b1 = task
            kernel(g0, g1, b0, b1, plan.w_pack, act.data, plan.k, plan.n,
                   plan.m, plan.comp, plan.bias, prog.a_zp, prog.scale_in,
                   prog.ops, prog.fparams, prog.iparams, prog.luts, sides,
                   prog.chans, out_view)

    if pool is None or len(plan.tasks) == 1:
        for task in plan.tasks:
            run(task)
    else:
        pool.run(run, plan.tasks)
    return out


def dense_gemm_s8(
    w: np.ndarray,
    a: np.ndarray,
    program: EpilogueProgram | None = None,
    bias: np.ndarray | None = None,
    threads: int = 1,
    pool=None,
    bn: int = DEFAULT_BN,
) -> np.ndarray:
    """One-shot dense baseline over a logical [K, N] u8 activation."""
    from .spmm import relayout_activation

    plan = plan_dense_gemm(w, a.shape[1], threads, program, bias, bn)
    act = relayout_activation(a, bn)
    return dense_gemm_exec(plan, act, pool)
