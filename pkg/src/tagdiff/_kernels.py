"""Compiled CSR loops.

Every kernel visits stored entries in CSR order, so each output element is
accumulated in one fixed sequence no matter how the work is partitioned.
"""
import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def csr_spmm_block(indptr, indices, data, x, out, col_lo, col_hi):
    # out[:, col_lo:col_hi] = A @ x[:, col_lo:col_hi]; out must be zeroed
    n_rows = indptr.shape[0] - 1
    for i in range(n_rows):
        for k in range(indptr[i], indptr[i + 1]):
            c = indices[k]
            v = data[k]
            for j in range(col_lo, col_hi):
                out[i, j] += v * x[c, j]


@njit(cache=True, nogil=True)
def csr_spgemm_count(a_ptr, a_idx, b_ptr, b_idx, n_cols, m_ptr, m_idx, use_mask):
    n_rows = a_ptr.shape[0] - 1
    marker = np.full(n_cols, -1, dtype=np.int64)
    allowed = np.full(n_cols, -1, dtype=np.int64)
    counts = np.zeros(n_rows, dtype=np.int64)
    for i in range(n_rows):
        if use_mask:
            for q in range(m_ptr[i], m_ptr[i + 1]):
                allowed[m_idx[q]] = i
        cnt = 0
        for k in range(a_ptr[i], a_ptr[i + 1]):
            c = a_idx[k]
            for q in range(b_ptr[c], b_ptr[c + 1]):
                j = b_idx[q]
                if use_mask and allowed[j] != i:
                    continue
                if marker[j] != i:
                    marker[j] = i
                    cnt += 1
        counts[i] = cnt
    return counts


@njit(cache=True, nogil=True)
def csr_spgemm_fill(a_ptr, a_idx, a_val, b_ptr, b_idx, b_val, n_cols,
                    m_ptr, m_idx, use_mask, out_ptr, out_idx, out_val):
    # Gustavson row-by-row product with a dense accumulator
    n_rows = a_ptr.shape[0] - 1
    marker = np.full(n_cols, -1, dtype=np.int64)
    allowed = np.full(n_cols, -1, dtype=np.int64)
    acc = np.zeros(n_cols, dtype=np.float64)
    for i in range(n_rows):
        if use_mask:
            for q in range(m_ptr[i], m_ptr[i + 1]):
                allowed[m_idx[q]] = i
        start = out_ptr[i]
        pos = start
        for k in range(a_ptr[i], a_ptr[i + 1]):
            c = a_idx[k]
            v = a_val[k]
            for q in range(b_ptr[c], b_ptr[c + 1]):
                j = b_idx[q]
                if use_mask and allowed[j] != i:
                    continue
                if marker[j] != i:
                    marker[j] = i
                    acc[j] = v * b_val[q]
                    out_idx[pos] = j
                    pos += 1
                else:
                    acc[j] += v * b_val[q]
        row_cols = np.sort(out_idx[start:pos])
        for p in range(pos - start):
            j = row_cols[p]
            out_idx[start + p] = j
            out_val[start + p] = acc[j]
