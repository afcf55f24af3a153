"""4x1 block-sparse weight encoding.

Weights are pruned so that blocks of 4 consecutive output channels sharing
one input-channel index are kept or dropped together.  The encoding groups
output rows in fours; each group stores a sorted list of nonzero column
indices plus the 4 weight values per column, packed into 16-byte
micro-tiles of 4 rows x 4 column-chunks (row-major inside the tile).
Index counts are padded up to a multiple of 4 with zero blocks at column
0 so the kernel always consumes whole micro-tiles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SparseFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Sparse4x1Weight:
    """Block-compressed S8 weight, 4 output rows per group.

    ``group_ptr[g]:group_ptr[g+1]`` delimits group g's padded block range
    inside ``idx``; ``nnz`` holds the unpadded block count per group.
    ``vals`` stores micro-tiles: block position p (within the padded
    range) row r lives at ``vals[(p // 4) * 16 + r * 4 + (p % 4)]``.
    ``scales`` is one float32 weight scale per logical output row.
    """

    rows: int            # padded to a multiple of 4
    cols: int
    logical_rows: int
    group_ptr: np.ndarray   # int32 [groups + 1], padded block offsets
    idx: np.ndarray         # int32 [total padded blocks], column per block
    vals: np.ndarray        # int8  [total padded blocks * 4], micro-tiles
    nnz: np.ndarray         # int32 [groups], unpadded block count
    scales: np.ndarray      # float32 [logical_rows]

    @property
    def groups(self) -> int:
        return self.rows // 4

    @property
    def nnz_blocks(self) -> int:
        return int(self.nnz.sum())

    def row_sums(self) -> np.ndarray:
        """S32 per-row weight sums (zero-point compensation vector)."""
        if len(self.idx) == 0:
            return np.zeros(self.logical_rows, dtype=np.int32)
        # [chunks, row] partial sums, then group ranges via prefix sums
        per_chunk = self.vals.reshape(-1, 4, 4).sum(axis=2, dtype=np.int64)
        prefix = np.zeros((per_chunk.shape[0] + 1, 4), dtype=np.int64)
        np.cumsum(per_chunk, axis=0, out=prefix[1:])
        c0 = self.group_ptr[:-1] // 4
        c1 = self.group_ptr[1:] // 4
        comp = (prefix[c1] - prefix[c0]).reshape(-1)  # [groups * 4]
        return comp[: self.logical_rows].astype(np.int32)


def encode_sparse(w: np.ndarray, scales: np.ndarray | None = None) -> Sparse4x1Weight:
    """Encode a dense S8 matrix [M x K] into the 4x1 block format.

    Any matrix is encodable: a column enters a group's index list iff at
    least one of the group's 4 rows is nonzero there.  Rows are zero-padded
    up to a multiple of 4; per-group block counts are padded to a multiple
    of 4 with zero blocks at column 0.
    """
    w = np.asarray(w)
    if w.dtype != np.int8:
        raise SparseFormatError(f"expected int8 weight, got {w.dtype}")
    if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
        raise SparseFormatError(f"expected non-empty 2-D weight, got {w.shape}")
    m, k = w.shape
    rows = (m + 3) // 4 * 4
    groups = rows // 4
    padded = np.zeros((rows, k), dtype=np.int8)
    padded[:m] = w

    ptr = np.zeros(groups + 1, dtype=np.int32)
    nnz = np.zeros(groups, dtype=np.int32)
    idx_parts = []
    val_parts = []
    for g in range(groups):
        block = padded[g * 4 : g * 4 + 4]              # [4, K]
        cols = np.flatnonzero(np.any(block != 0, axis=0)).astype(np.int32)
        nnz[g] = len(cols)
        pad = (-len(cols)) % 4
        cols_p = np.concatenate([cols, np.zeros(pad, dtype=np.int32)])
        v = block[:, cols_p].T.copy()                   # [blocks, 4 rows]
        if pad:
            v[len(cols):] = 0
        # micro-tile layout: chunk-major, rows inside a chunk, 4 cols per row
        tiles = v.reshape(-1, 4, 4).transpose(0, 2, 1)  # [chunks, row, chunk col]
        idx_parts.append(cols_p)
        val_parts.append(tiles.reshape(-1))
        ptr[g + 1] = ptr[g] + len(cols_p)

    idx = np.concatenate(idx_parts) if idx_parts else np.zeros(0, np.int32)
    vals = np.concatenate(val_parts) if val_parts else np.zeros(0, np.int8)
    if scales is None:
        scales = np.ones(m, dtype=np.float32)
    scales = np.asarray(scales, dtype=np.float32).reshape(-1)
    if scales.shape[0] != m:
        raise SparseFormatError("need one weight scale per logical row")
    return Sparse4x1Weight(
        rows=rows, cols=k, logical_rows=m,
        group_ptr=ptr, idx=idx.astype(np.int32), vals=vals.astype(np.int8),
        nnz=nnz, scales=scales,
    )


def decode_sparse(s: Sparse4x1Weight) -> np.ndarray:
    """Expand back to a dense S8 matrix trimmed to the logical rows."""
    if np.any(s.idx < 0) or np.any(s.idx >= s.cols):
        raise SparseFormatError("column index out of range")
    w = np.zeros((s.rows, s.cols), dtype=np.int16)
    total = len(s.idx)
    if total:
        # undo the micro-tile transpose: [block, row] value matrix
        vm = s.vals.reshape(-1, 4, 4).transpose(0, 2, 1).reshape(-1, 4)
        counts = np.diff(s.group_ptr)
        g = np.repeat(np.arange(s.groups, dtype=np.int64), counts)
        rows = g[:, None] * 4 + np.arange(4)[None, :]
        cols = np.broadcast_to(s.idx.astype(np.int64)[:, None], (total, 4))
        # += so zero padding blocks sharing column 0 never clobber data
        np.add.at(w, (rows, cols), vm)
    return w[: s.logical_rows].astype(np.int8)


def sparsity_ratio(s: Sparse4x1Weight) -> float:
    """1 - nonzero blocks / total block grid (padding excluded)."""
    total = ((s.logical_rows + 3) // 4) * s.cols
    return 1.0 - s.nnz_blocks / total


def generate_pattern_weight(m: int, k: int, target_ratio: float,
                            seed: int = 0) -> np.ndarray:
    """Random dense S8 matrix honoring the 4x1 pattern at ``target_ratio``.

    Exactly round((1 - ratio) * (M / 4) * K) blocks are populated with
    nonzero values; deterministic for a given seed.  When M is not a
    multiple of 4, blocks landing in the final partial group only fill the
    existing rows.
    """
    if not 0.0 <= target_ratio <= 1.0:
        raise ValueError("target_ratio must be in [0, 1]")
    rng = np.random.default_rng(seed)
    groups = (m + 3) // 4
    total = groups * k
    n_blocks = int(round((1.0 - target_ratio) * (m / 4) * k))
    n_blocks = min(n_blocks, total)
    w = np.zeros((groups * 4, k), dtype=np.int8)
    chosen = rng.choice(total, size=n_blocks, replace=False)
    if n_blocks:
        g, col = np.divmod(np.sort(chosen), k)
        # nonzero int8 draws: [1, 127] with a random sign
        mags = rng.integers(1, 128, size=(n_blocks, 4))
        signs = rng.integers(0, 2, size=(n_blocks, 4)) * 2 - 1
        vals = (mags * signs).astype(np.int8)
        for i in range(n_blocks):
            w[g[i] * 4 : g[i] * 4 + 4, col[i]] = vals[i]
    return w[:m].copy()
