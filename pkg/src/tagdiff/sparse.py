"""Compressed-sparse-row matrices and the kernels used by graph diffusion.

Edge convention: an edge ``u -> v`` is stored as ``A[u, v]``, so row ``i``
holds the out-edges of node ``i``.  Dense matrices are plain C-ordered
``float64`` numpy arrays.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _kernels
from .errors import InvalidInputError

__all__ = [
    "SparseMatrix",
    "as_dense",
    "spmm_dense",
    "spgemm",
    "transpose",
    "hadamard",
    "elementwise_max",
    "add_identity",
    "out_degrees",
    "row_sums",
    "scale_rows",
    "scale_cols",
    "strip_diagonal",
]


def _frozen(arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    if arr.flags.writeable:
        arr = arr.copy() if arr.base is not None else arr
        arr.flags.writeable = False
    return arr


class SparseMatrix:
    """Immutable CSR matrix of 64-bit reals.

    Explicit zeros are never stored, column indices are strictly increasing
    within a row, and the arrays are read-only so instances can be shared
    between threads.
    """

    __slots__ = ("n_rows", "n_cols", "row_offsets", "col_indices", "values")

    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values, check=True):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_offsets = _frozen(row_offsets, np.int64)
        self.col_indices = _frozen(col_indices, np.int64)
        self.values = _frozen(values, np.float64)
        if check:
            self.validate()

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        """Build from triplets; duplicates are summed and zeros pruned."""
        n_rows, n_cols = (int(s) for s in shape)
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        values = np.broadcast_to(np.asarray(values, dtype=np.float64), rows.shape).ravel()
        if not (rows.shape == cols.shape == values.shape):
            raise InvalidInputError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= n_rows:
                raise InvalidInputError("row index out of range")
            if cols.min() < 0 or cols.max() >= n_cols:
                raise InvalidInputError("column index out of range")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("non-finite value")
        keys = rows * n_cols + cols
        uniq, inverse = np.unique(keys, return_inverse=True)
        summed = np.bincount(inverse, weights=values, minlength=uniq.size)
        keep = summed != 0.0
        uniq, summed = uniq[keep], summed[keep]
        return cls._from_sorted_keys(uniq, summed, n_rows, n_cols)

    @classmethod
    def _from_sorted_keys(cls, keys, values, n_rows, n_cols):
        r = keys // n_cols if n_cols else keys
        c = keys - r * n_cols
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=n_rows), out=offsets[1:])
        return cls(n_rows, n_cols, offsets, c, values, check=False)

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=np.float64)
        if dense.ndim != 2:
            raise InvalidInputError("expected a 2-d array")
        r, c = np.nonzero(dense)
        return cls.from_coo(r, c, dense[r, c], dense.shape)

    @classmethod
    def from_edges(cls, src, dst, n_nodes, weights=1.0):
        """Adjacency with ``A[src[e], dst[e]] = weights[e]`` summed over duplicates."""
        return cls.from_coo(src, dst, weights, (n_nodes, n_nodes))

    @classmethod
    def identity(cls, n):
        return cls(n, n, np.arange(n + 1), np.arange(n), np.ones(n), check=False)

    @classmethod
    def zeros(cls, n_rows, n_cols):
        return cls(n_rows, n_cols, np.zeros(n_rows + 1), [], [], check=False)

    # -- accessors --------------------------------------------------------

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def nnz(self):
        return int(self.values.size)

    def row_ids(self):
        """Row index of every stored entry, in storage order."""
        return np.repeat(np.arange(self.n_rows, dtype=np.int64), np.diff(self.row_offsets))

    def keys(self):
        return self.row_ids() * self.n_cols + self.col_indices

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.row_ids(), self.col_indices] = self.values
        return out

    def with_values(self, values):
        """Same pattern, new values; zeros introduced by ``values`` are pruned."""
        values = np.asarray(values, dtype=np.float64)
        keep = values != 0.0
        if keep.all():
            return SparseMatrix(self.n_rows, self.n_cols, self.row_offsets,
                                self.col_indices, values, check=False)
        return SparseMatrix._from_sorted_keys(self.keys()[keep], values[keep],
                                              self.n_rows, self.n_cols)

    def pattern(self):
        """Binary copy of the sparsity pattern."""
        return self.with_values(np.ones(self.nnz))

    def validate(self):
        """Raise :class:`InvalidInputError` unless every CSR invariant holds."""
        ptr, idx, val = self.row_offsets, self.col_indices, self.values
        if self.n_rows < 0 or self.n_cols < 0:
            raise InvalidInputError("negative dimension")
        if ptr.shape != (self.n_rows + 1,):
            raise InvalidInputError("row_offsets must have n_rows + 1 entries")
        if ptr[0] != 0 or ptr[-1] != val.size or idx.size != val.size:
            raise InvalidInputError("row_offsets inconsistent with stored entries")
        if np.any(np.diff(ptr) < 0):
            raise InvalidInputError("row_offsets must be non-decreasing")
        if idx.size:
            if idx.min() < 0 or idx.max() >= self.n_cols:
                raise InvalidInputError("column index out of range")
            step = np.diff(idx)
            row_start = np.zeros(idx.size, dtype=bool)
            row_start[ptr[:-1][np.diff(ptr) > 0]] = True
            if np.any((step <= 0) & ~row_start[1:]):
                raise InvalidInputError("column indices must strictly increase within a row")
        if np.any(val == 0.0):
            raise InvalidInputError("explicit zero stored")
        if not np.all(np.isfinite(val)):
            raise InvalidInputError("non-finite value stored")
        return self

    def __eq__(self, other):
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (self.shape == other.shape
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices)
                and np.array_equal(self.values, other.values))

    __hash__ = None

    def __repr__(self):
        return f"SparseMatrix(shape={self.shape}, nnz={self.nnz})"


def as_dense(x, name="x"):
    """Validate and return ``x`` as a finite C-ordered float64 matrix."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-d, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return x


def _column_blocks(n_cols, n_blocks):
    n_blocks = max(1, min(n_blocks, n_cols))
    edges = np.linspace(0, n_cols, n_blocks + 1).astype(np.int64)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def spmm_dense(a, x, n_threads=1, n_blocks=None):
    """Sparse-times-dense product ``a @ x``.

    Columns of ``x`` may be split into ``n_blocks`` disjoint blocks processed
    by ``n_threads`` workers.  The result is bit-identical for any split.
    """
    x = as_dense(x)
    if a.n_cols != x.shape[0]:
        raise InvalidInputError(f"cannot multiply {a.shape} by {x.shape}")
    out = np.zeros((a.n_rows, x.shape[1]))
    if a.nnz == 0 or x.shape[1] == 0:
        return out
    blocks = _column_blocks(x.shape[1], n_blocks or n_threads)
    args = (a.row_offsets, a.col_indices, a.values, x, out)
    if n_threads <= 1 or len(blocks) == 1:
        for lo, hi in blocks:
            _kernels.csr_spmm_block(*args, lo, hi)
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(lambda b: _kernels.csr_spmm_block(*args, *b), blocks))
    return out


def spgemm(a, b, mask=None):
    """Sparse product ``a @ b``.

    With ``mask`` given, only entries inside the mask's pattern are computed,
    which keeps memory proportional to ``mask.nnz`` instead of the full
    product.
    """
    if a.n_cols != b.n_rows:
        raise InvalidInputError(f"cannot multiply {a.shape} by {b.shape}")
    use_mask = mask is not None
    if use_mask:
        if mask.shape != (a.n_rows, b.n_cols):
            raise InvalidInputError("mask shape does not match the product")
        m_ptr, m_idx = mask.row_offsets, mask.col_indices
    else:
        m_ptr = np.zeros(1, dtype=np.int64)
        m_idx = np.zeros(0, dtype=np.int64)
    counts = _kernels.csr_spgemm_count(a.row_offsets, a.col_indices, b.row_offsets,
                                       b.col_indices, b.n_cols, m_ptr, m_idx, use_mask)
    ptr = np.zeros(a.n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    idx = np.empty(ptr[-1], dtype=np.int64)
    val = np.empty(ptr[-1], dtype=np.float64)
    _kernels.csr_spgemm_fill(a.row_offsets, a.col_indices, a.values, b.row_offsets,
                             b.col_indices, b.values, b.n_cols, m_ptr, m_idx, use_mask,
                             ptr, idx, val)
    out = SparseMatrix(a.n_rows, b.n_cols, ptr, idx, val, check=False)
    return out.with_values(val) if np.any(val == 0.0) else out


def transpose(a):
    order = np.argsort(a.col_indices, kind="stable")
    ptr = np.zeros(a.n_cols + 1, dtype=np.int64)
    np.cumsum(np.bincount(a.col_indices, minlength=a.n_cols), out=ptr[1:])
    return SparseMatrix(a.n_cols, a.n_rows, ptr, a.row_ids()[order],
                        a.values[order], check=False)


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")


def hadamard(a, b):
    """Elementwise product; the pattern is the intersection of both patterns."""
    _check_same_shape(a, b)
    keys, ia, ib = np.intersect1d(a.keys(), b.keys(), assume_unique=True,
                                  return_indices=True)
    vals = a.values[ia] * b.values[ib]
    keep = vals != 0.0
    return SparseMatrix._from_sorted_keys(keys[keep], vals[keep], a.n_rows, a.n_cols)


def elementwise_max(a, b):
    """``max(a, b)`` entrywise, with absent entries read as 0."""
    _check_same_shape(a, b)
    keys = np.concatenate([a.keys(), b.keys()])
    vals = np.concatenate([a.values, b.values])
    order = np.argsort(keys, kind="stable")
    keys, vals = keys[order], vals[order]
    uniq, starts, counts = np.unique(keys, return_index=True, return_counts=True)
    merged = np.maximum.reduceat(vals, starts) if keys.size else vals
    merged = np.where(counts == 1, np.maximum(merged, 0.0), merged)
    keep = merged != 0.0
    return SparseMatrix._from_sorted_keys(uniq[keep], merged[keep], a.n_rows, a.n_cols)


def add_identity(a, scale=1.0):
    """``a + scale * I`` for square ``a``."""
    if a.n_rows != a.n_cols:
        raise InvalidInputError("add_identity needs a square matrix")
    n = a.n_rows
    diag = np.arange(n, dtype=np.int64)
    return SparseMatrix.from_coo(np.concatenate([a.row_ids(), diag]),
                                 np.concatenate([a.col_indices, diag]),
                                 np.concatenate([a.values, np.full(n, float(scale))]),
                                 a.shape)


def strip_diagonal(a):
    keep = a.row_ids() != a.col_indices
    return SparseMatrix._from_sorted_keys(a.keys()[keep], a.values[keep], a.n_rows, a.n_cols)


def out_degrees(a):
    """Number of stored entries in each row (out-degree under the edge convention)."""
    return np.diff(a.row_offsets)


def row_sums(a):
    return np.bincount(a.row_ids(), weights=a.values, minlength=a.n_rows)


def _check_scale(d, n):
    d = np.asarray(d, dtype=np.float64).ravel()
    if d.shape != (n,):
        raise InvalidInputError(f"expected {n} scale factors, got {d.shape[0]}")
    if not np.all(np.isfinite(d)):
        raise InvalidInputError("scale factors must be finite")
    return d


def scale_rows(a, d):
    """``diag(d) @ a``."""
    d = _check_scale(d, a.n_rows)
    return a.with_values(a.values * d[a.row_ids()])


def scale_cols(a, d):
    """``a @ diag(d)``."""
    d = _check_scale(d, a.n_cols)
    return a.with_values(a.values * d[a.col_indices])
