"""Dense f32 auxiliary operators: GELU, softmax, layer norm, batch matmul.

These back the scaled-dot-product attention block and the unfused graph
path.  Each op has exactly one implementation (a numba kernel with a fixed
summation order), so the fused epilogues and the standalone graph nodes
produce identical bits and results do not depend on thread count.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from .epilogue import _gelu_scalar


@njit(cache=True, nogil=True)
def _gelu_flat(x, out):
    for i in range(x.size):
        out[i] = _gelu_scalar(x[i])


def gelu_f32(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """tanh-approximation GELU, elementwise."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if out is None:
        out = np.empty_like(x)
    _gelu_flat(x.reshape(-1), out.reshape(-1))
    return out


@njit(cache=True, nogil=True)
def _softmax_rows(x, out):
    rows, n = x.shape
    for r in range(rows):
        m = x[r, 0]
        for i in range(1, n):
            if x[r, i] > m:
                m = x[r, i]
        s = 0.0
        for i in range(n):
            e = np.float32(math.exp(np.float64(x[r, i]) - np.float64(m)))
            out[r, i] = e
            s += np.float64(e)
        inv = np.float32(1.0 / s)
        for i in range(n):
            out[r, i] = out[r, i] * inv


def softmax_f32(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Numerically-stable softmax over the last axis."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    if out is None:
        out = np.empty_like(x)
    n = x.shape[-1]
    _softmax_rows(x.reshape(-1, n), out.reshape(-1, n))
    return out


@njit(cache=True, nogil=True)
def _layer_norm_rows(x, gamma, beta, eps, out):
    rows, n = x.shape
    for r in range(rows):
        s = 0.0
        for i in range(n):
            s += np.float64(x[r, i])
        mean = s / n
        v = 0.0
        for i in range(n):
            d = np.float64(x[r, i]) - mean
            v += d * d
        inv = np.float32(1.0 / math.sqrt(v / n + eps))
        mean32 = np.float32(mean)
        for i in range(n):
            y = (x[r, i] - mean32) * inv
            out[r, i] = y * gamma[i] + beta[i]


def layer_norm_f32(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-5,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Layer normalization over the last axis with affine gamma/beta."""
    x = np.ascontiguousarray(x, dtype=np.float32)
    n = x.shape[-1]
    gamma = np.ascontiguousarray(gamma, dtype=np.float32)
    beta = np.ascontiguousarray(beta, dtype=np.float32)
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ValueError("gamma/beta must match the normalized axis")
    if out is None:
        out = np.empty_like(x)
    _layer_norm_rows(x.reshape(-1, n), gamma, beta, np.float64(eps),
                     out.reshape(-1, n))
    return out


@njit(cache=True, nogil=True)
def _bmm_nn(a, b, alpha, out):
    bs, m, k = a.shape
    n = b.shape[2]
    for bi in range(bs):
        for i in range(m):
            for j in range(n):
                out[bi, i, j] = 0.0
            for p in range(k):
                av = a[bi, i, p]
                for j in range(n):
                    out[bi, i, j] += av * b[bi, p, j]
            for j in range(n):
                out[bi, i, j] *= alpha


@njit(cache=True, nogil=True)
def _bmm_nt(a, b, alpha, out):
    bs, m, k = a.shape
    n = b.shape[1]
    for bi in range(bs):
        for i in range(m):
            for j in range(n):
                s = np.float32(0.0)
                for p in range(k):
                    s += a[bi, i, p] * b[bi, j, p]
                out[bi, i, j] = s * alpha


def batch_matmul_f32(
    a: np.ndarray,
    b: np.ndarray,
    transpose_b: bool = False,
    alpha: float = 1.0,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Batched f32 matmul with a fixed accumulation order.

    a: [B, M, K]; b: [B, K, N] (or [B, N, K] with transpose_b).
    """
    a = np.ascontiguousarray(a, dtype=np.float32)
    b = np.ascontiguousarray(b, dtype=np.float32)
    if a.ndim != 3 or b.ndim != 3 or a.shape[0] != b.shape[0]:
        raise ValueError(f"bad batch matmul shapes {a.shape} x {b.shape}")
    if transpose_b:
        if a.shape[2] != b.shape[2]:
            raise ValueError(f"inner dims differ: {a.shape} x {b.shape}^T")
        n = b.shape[1]
    else:
        if a.shape[2] != b.shape[1]:
            raise ValueError(f"inner dims differ: {a.shape} x {b.shape}")
        n = b.shape[2]
    if out is None:
        out = np.empty((a.shape[0], a.shape[1], n), dtype=np.float32)
    if transpose_b:
        _bmm_nt(a, b, np.float32(alpha), out)
    else:
        _bmm_nn(a, b, np.float32(alpha), out)
    return out
