"""CSR sparse matrices and the graph propagation kernels.

Two kernels drive the models: the standard propagation (normalized
adjacency times a dense feature block) and a masked variant that removes
each node's own contribution on a designated set of label columns, plus
the reverse-mode adjoint of the masked variant.

All arithmetic is float64.  Matrices are immutable after construction and
every kernel is sequential and bitwise-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Scratch for the row-segmented product is capped at this many elements;
# wider feature blocks are processed in column chunks.
_CHUNK_ELEMS = 2_000_000


@dataclass(frozen=True)
class SparseMatrix:
    """Sparse matrix in canonical CSR form.

    Canonical means: ``row_offsets`` is non-decreasing with
    ``row_offsets[0] == 0`` and ``row_offsets[-1] == nnz``, column indices
    are strictly increasing within each row (sorted, no duplicates), and
    all values are finite.  ``diag`` optionally caches the main diagonal;
    ``normalize_adjacency`` fills it because the masked kernels need it on
    every call.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    diag: np.ndarray | None = None

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.n_rows < 0 or self.n_cols < 0:
            raise ValueError("matrix dimensions must be non-negative")
        if offsets.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if offsets[0] != 0 or np.any(np.diff(offsets) < 0):
            raise ValueError("row_offsets must start at 0 and be non-decreasing")
        if cols.shape != vals.shape or offsets[-1] != cols.shape[0]:
            raise ValueError("row_offsets[-1] must equal len(col_indices) == len(values)")
        if cols.size:
            if cols.min() < 0 or cols.max() >= self.n_cols:
                raise ValueError("column index out of range")
            row_ids = np.repeat(np.arange(self.n_rows), np.diff(offsets))
            same_row = row_ids[1:] == row_ids[:-1]
            if np.any(np.diff(cols)[same_row] <= 0):
                raise ValueError("column indices must be strictly increasing within each row")
        if not np.all(np.isfinite(vals)):
            raise ValueError("all values must be finite")
        diag = self.diag
        if diag is not None:
            diag = np.ascontiguousarray(diag, dtype=np.float64)
            if diag.shape != (min(self.n_rows, self.n_cols),):
                raise ValueError("cached diagonal has wrong length")
        for arr in (offsets, cols, vals, diag):
            if arr is not None:
                arr.flags.writeable = False
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "diag", diag)

    @property
    def nnz(self) -> int:
        return int(self.col_indices.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_rows, self.n_cols)

    @classmethod
    def from_coo(cls, rows, cols, values, n_rows: int, n_cols: int) -> "SparseMatrix":
        """Build canonical CSR from coordinate triplets, summing duplicates."""
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.asarray(values, dtype=np.float64).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise ValueError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows or cols.min() < 0 or cols.max() >= n_cols:
                raise ValueError("coordinate out of range")
            order = np.lexsort((cols, rows))
            rows, cols, values = rows[order], cols[order], values[order]
            fresh = np.empty(rows.shape[0], dtype=bool)
            fresh[0] = True
            fresh[1:] = (rows[1:] != rows[:-1]) | (cols[1:] != cols[:-1])
            starts = np.flatnonzero(fresh)
            rows, cols = rows[starts], cols[starts]
            values = np.add.reduceat(values, starts)
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, cols, values)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        idx = np.arange(n, dtype=np.int64)
        return cls(n, n, np.arange(n + 1, dtype=np.int64), idx, np.ones(n), diag=np.ones(n))

    def diagonal(self) -> np.ndarray:
        """Main diagonal as a dense vector (cached copy when available)."""
        if self.diag is not None:
            return self.diag
        d = np.zeros(min(self.n_rows, self.n_cols))
        row_ids = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        hit = self.col_indices == row_ids
        d[row_ids[hit]] = self.values[hit]
        return d

    def toarray(self) -> np.ndarray:
        """Dense copy (test / oracle use)."""
        out = np.zeros((self.n_rows, self.n_cols))
        row_ids = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        out[row_ids, self.col_indices] = self.values
        return out


@dataclass(frozen=True)
class LabelColumnMask:
    """Indices of the feature columns that carry label information."""

    label_cols: np.ndarray

    def __post_init__(self):
        cols = np.asarray(self.label_cols, dtype=np.int64).ravel()
        if cols.size:
            if cols.min() < 0:
                raise ValueError("label column indices must be non-negative")
            if np.unique(cols).size != cols.size:
                raise ValueError("label column indices must be distinct")
            cols = np.sort(cols)
        cols.flags.writeable = False
        object.__setattr__(self, "label_cols", cols)

    @classmethod
    def trailing(cls, n_cols: int, count: int) -> "LabelColumnMask":
        """Mask covering the last `count` of `n_cols` columns."""
        if count < 0 or count > n_cols:
            raise ValueError("invalid trailing column count")
        return cls(np.arange(n_cols - count, n_cols, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.label_cols.size)


def build_adjacency(edges, n: int) -> SparseMatrix:
    """Symmetric binary adjacency with zero diagonal from an edge list.

    Edges may contain duplicates, self pairs and single directions; the
    result coalesces both orientations and drops self pairs.
    """
    e = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
    e = e.reshape(-1, 2)
    if e.size:
        bad = (e < 0) | (e >= n)
        if np.any(bad):
            i = int(np.flatnonzero(bad.any(axis=1))[0])
            raise ValueError(f"edge ({e[i, 0]}, {e[i, 1]}) out of range for n={n}")
        e = e[e[:, 0] != e[:, 1]]
    und = np.unique(np.concatenate([e, e[:, ::-1]], axis=0), axis=0)
    offsets = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(und[:, 0], minlength=n), out=offsets[1:])
    return SparseMatrix(n, n, offsets, und[:, 1], np.ones(und.shape[0]))


def normalize_adjacency(adjacency: SparseMatrix) -> SparseMatrix:
    """Add self-loops and scale symmetrically by inverse sqrt degrees.

    For a symmetric zero-diagonal adjacency A this produces the propagation
    matrix with entries A_ij / sqrt(d_i d_j) where d_i counts neighbors of
    i plus the added self-loop, so every diagonal entry is positive.  The
    diagonal is cached on the result.
    """
    if adjacency.n_rows != adjacency.n_cols:
        raise ValueError("adjacency must be square")
    n = adjacency.n_rows
    row_ids = np.repeat(np.arange(n), np.diff(adjacency.row_offsets))
    deg = np.bincount(row_ids, weights=adjacency.values, minlength=n) + 1.0
    dinv = 1.0 / np.sqrt(deg)
    off_vals = adjacency.values * dinv[row_ids] * dinv[adjacency.col_indices]
    diag_vals = dinv * dinv
    rows = np.concatenate([row_ids, np.arange(n, dtype=np.int64)])
    cols = np.concatenate([adjacency.col_indices, np.arange(n, dtype=np.int64)])
    vals = np.concatenate([off_vals, diag_vals])
    return replace(SparseMatrix.from_coo(rows, cols, vals, n, n), diag=diag_vals)


def spmm(matrix: SparseMatrix, dense: np.ndarray) -> np.ndarray:
    """Exact sparse @ dense product, row-segmented and sequential."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim != 2 or matrix.n_cols != dense.shape[0]:
        raise ValueError(
            f"dimension mismatch: {matrix.shape} @ {dense.shape}"
        )
    k = dense.shape[1]
    out = np.zeros((matrix.n_rows, k))
    if matrix.nnz == 0 or k == 0:
        return out
    starts = matrix.row_offsets[:-1]
    nonempty = np.flatnonzero(matrix.row_offsets[1:] > starts)
    seg_starts = starts[nonempty]
    vals = matrix.values[:, None]
    chunk = max(1, min(k, _CHUNK_ELEMS // matrix.nnz))
    for j in range(0, k, chunk):
        contrib = vals * dense[matrix.col_indices, j : j + chunk]
        out[nonempty, j : j + chunk] = np.add.reduceat(contrib, seg_starts, axis=0)
    return out


def _mask_columns(mask, n_cols: int) -> np.ndarray:
    if mask is None:
        return np.empty(0, dtype=np.int64)
    cols = mask.label_cols if isinstance(mask, LabelColumnMask) else np.asarray(mask, dtype=np.int64)
    if cols.size and cols.max() >= n_cols:
        raise ValueError("label column index out of range for the feature block")
    return cols


def propagate_masked(ahat: SparseMatrix, features: np.ndarray, mask) -> np.ndarray:
    """Propagation with self-loops removed on the label columns.

    Non-label columns equal the plain product exactly; on a label column c
    row i becomes (ahat @ X)[i, c] - ahat[i, i] * X[i, c].  An empty mask
    reduces to ``spmm``.
    """
    out = spmm(ahat, features)
    cols = _mask_columns(mask, out.shape[1])
    if cols.size:
        if ahat.n_rows != ahat.n_cols:
            raise ValueError("masked propagation needs a square matrix")
        d = ahat.diag if ahat.diag is not None else ahat.diagonal()
        out[:, cols] -= d[:, None] * np.asarray(features, dtype=np.float64)[:, cols]
    return out


def propagate_masked_adjoint(ahat: SparseMatrix, grad: np.ndarray, mask) -> np.ndarray:
    """Reverse-mode adjoint of ``propagate_masked`` for a symmetric matrix.

    Because the propagation matrix is symmetric the adjoint reuses the same
    kernel: ahat @ G on non-label columns, minus the diagonal term on label
    columns.
    """
    return propagate_masked(ahat, grad, mask)
