import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tagdiff.errors import InvalidInputError
from tagdiff.sparse import (
    SparseMatrix,
    elementwise_max,
    hadamard,
    out_degrees,
    row_sums,
    scale_cols,
    scale_rows,
    spgemm,
    spmm_dense,
    transpose,
)

from conftest import CYCLE3, random_dense

finite = st.floats(-10, 10, allow_nan=False, width=64)


@st.composite
def sparse_pairs(draw, max_n=8):
    n = draw(st.integers(1, max_n))
    m = draw(st.integers(1, max_n))
    mask = draw(arrays(bool, (n, m)))
    vals = draw(arrays(np.float64, (n, m), elements=finite))
    return np.where(mask, vals, 0.0)


# -- construction ---------------------------------------------------------

def test_from_coo_sums_duplicates_and_prunes_zeros():
    a = SparseMatrix.from_coo([0, 0, 1, 1, 2], [1, 1, 0, 0, 2], [1.0, 2.0, 1.5, -1.5, 4.0], (3, 3))
    assert a.nnz == 2
    np.testing.assert_array_equal(a.to_dense(), [[0, 3, 0], [0, 0, 0], [0, 0, 4]])
    assert a.validate() is a


def test_arrays_are_read_only():
    a = SparseMatrix.identity(3)
    with pytest.raises(ValueError):
        a.values[0] = 2.0


@pytest.mark.parametrize("ptr, idx, val", [
    ([0, 1], [0], [0.0]),            # explicit zero
    ([0, 2], [1, 0], [1.0, 1.0]),    # unsorted columns
    ([0, 2], [0, 0], [1.0, 1.0]),    # duplicate column
    ([0, 1], [2], [1.0]),            # column out of range
    ([1, 1], [], []),                # offsets do not start at 0
])
def test_validate_rejects_broken_csr(ptr, idx, val):
    with pytest.raises(InvalidInputError):
        SparseMatrix(1, 2, ptr, idx, val)


def test_from_coo_rejects_out_of_range():
    with pytest.raises(InvalidInputError):
        SparseMatrix.from_coo([0], [3], [1.0], (2, 2))


# -- spmm_dense -----------------------------------------------------------

def test_spmm_identity():
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(spmm_dense(SparseMatrix.identity(3), x), x)


def test_spmm_two_by_two():
    a = SparseMatrix.from_dense([[0, 1], [0, 0]])
    np.testing.assert_array_equal(spmm_dense(a, [[1, 2], [3, 4]]), [[3, 4], [0, 0]])


def test_spmm_random_matches_dense(rng):
    dense = random_dense(rng, 50, density=0.2)
    x = rng.normal(size=(50, 7))
    out = spmm_dense(SparseMatrix.from_dense(dense), x)
    assert np.max(np.abs(out - dense @ x)) <= 1e-12


def test_spmm_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        spmm_dense(SparseMatrix.identity(3), np.ones((2, 2)))


@pytest.mark.parametrize("n_threads, n_blocks", [(1, 5), (2, 2), (3, 7), (4, 64)])
def test_spmm_column_partition_is_bit_identical(rng, n_threads, n_blocks):
    a = SparseMatrix.from_dense(random_dense(rng, 80, density=0.1))
    x = rng.normal(size=(80, 33))
    ref = spmm_dense(a, x)
    out = spmm_dense(a, x, n_threads=n_threads, n_blocks=n_blocks)
    assert out.tobytes() == ref.tobytes()


@given(sparse_pairs(), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_spmm_linear_in_x(dense, seed):
    rng = np.random.default_rng(seed)
    a = SparseMatrix.from_dense(dense)
    x, y = rng.normal(size=(2, dense.shape[1], 3))
    lhs = spmm_dense(a, 2.0 * x + y)
    rhs = 2.0 * spmm_dense(a, x) + spmm_dense(a, y)
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


# -- spgemm ---------------------------------------------------------------

def test_spgemm_three_cycle_squared():
    a = SparseMatrix.from_dense(CYCLE3)
    a2 = spgemm(a, a)
    expected = np.zeros((3, 3))
    expected[0, 2] = expected[1, 0] = expected[2, 1] = 1.0
    np.testing.assert_array_equal(a2.to_dense(), expected)


def test_spgemm_zero_annihilates(rng):
    b = SparseMatrix.from_dense(random_dense(rng, 5))
    z = spgemm(SparseMatrix.zeros(4, 5), b)
    assert z.nnz == 0 and z.shape == (4, 5)


def test_spgemm_random_matches_dense(rng):
    a_d, b_d = random_dense(rng, 30), random_dense(rng, 30)
    c = spgemm(SparseMatrix.from_dense(a_d), SparseMatrix.from_dense(b_d))
    c.validate()
    assert np.max(np.abs(c.to_dense() - a_d @ b_d)) <= 1e-12


def test_spgemm_rectangular_and_masked(rng):
    a_d, b_d = random_dense(rng, 12, 20, 0.3), random_dense(rng, 20, 9, 0.3)
    mask_d = random_dense(rng, 12, 9, 0.5, binary=True)
    a, b = SparseMatrix.from_dense(a_d), SparseMatrix.from_dense(b_d)
    full = spgemm(a, b)
    masked = spgemm(a, b, mask=SparseMatrix.from_dense(mask_d))
    masked.validate()
    np.testing.assert_allclose(masked.to_dense(), np.where(mask_d != 0, full.to_dense(), 0.0), atol=1e-12)


def test_spgemm_cancellation_is_pruned():
    a = SparseMatrix.from_dense([[1.0, 1.0]])
    b = SparseMatrix.from_dense([[1.0], [-1.0]])
    c = spgemm(a, b)
    assert c.nnz == 0
    c.validate()


def test_spgemm_dimension_mismatch():
    with pytest.raises(InvalidInputError):
        spgemm(SparseMatrix.identity(2), SparseMatrix.identity(3))


# -- transpose / hadamard / max --------------------------------------------

def test_transpose_single_entry():
    t = transpose(SparseMatrix.from_dense([[0, 1], [0, 0]]))
    np.testing.assert_array_equal(t.to_dense(), [[0, 0], [1, 0]])


def test_transpose_symmetric_is_fixed(rng):
    d = random_dense(rng, 10)
    s = SparseMatrix.from_dense(d + d.T)
    assert transpose(s) == s


@given(sparse_pairs())
@settings(max_examples=100, deadline=None)
def test_transpose_is_involution(dense):
    a = SparseMatrix.from_dense(dense)
    t = transpose(a)
    t.validate()
    np.testing.assert_array_equal(t.to_dense(), dense.T)
    assert transpose(t) == a


def test_hadamard_self_pattern_squares(rng):
    a = SparseMatrix.from_dense(random_dense(rng, 10))
    sq = hadamard(a, a)
    np.testing.assert_array_equal(sq.values, a.values ** 2)


def test_hadamard_disjoint_patterns_empty():
    a = SparseMatrix.from_dense([[1, 0], [0, 1]])
    b = SparseMatrix.from_dense([[0, 1], [1, 0]])
    assert hadamard(a, b).nnz == 0


def test_hadamard_random_matches_dense(rng):
    a_d, b_d = random_dense(rng, 30, density=0.5), random_dense(rng, 30, density=0.5)
    h = hadamard(SparseMatrix.from_dense(a_d), SparseMatrix.from_dense(b_d))
    h.validate()
    assert np.max(np.abs(h.to_dense() - a_d * b_d)) <= 1e-12


@given(sparse_pairs(max_n=6), st.integers(0, 2**32 - 1))
@settings(max_examples=50, deadline=None)
def test_hadamard_commutes(dense, seed):
    rng = np.random.default_rng(seed)
    other = np.where(rng.random(dense.shape) < 0.5, rng.normal(size=dense.shape), 0.0)
    a, b = SparseMatrix.from_dense(dense), SparseMatrix.from_dense(other)
    assert hadamard(a, b) == hadamard(b, a)


def test_hadamard_shape_mismatch():
    with pytest.raises(InvalidInputError):
        hadamard(SparseMatrix.identity(2), SparseMatrix.identity(3))


@given(sparse_pairs(max_n=6))
@settings(max_examples=50, deadline=None)
def test_elementwise_max_matches_dense(dense):
    sq = dense[: min(dense.shape), : min(dense.shape)]
    a = SparseMatrix.from_dense(sq)
    m = elementwise_max(a, transpose(a))
    m.validate()
    np.testing.assert_array_equal(m.to_dense(), np.maximum(sq, sq.T))


# -- degrees and scaling ---------------------------------------------------

def test_out_degrees():
    np.testing.assert_array_equal(out_degrees(SparseMatrix.identity(3)), [1, 1, 1])
    np.testing.assert_array_equal(out_degrees(SparseMatrix.from_dense(CYCLE3)), [1, 1, 1])
    star = SparseMatrix.from_edges([0, 0, 0], [1, 2, 3], 4)
    np.testing.assert_array_equal(out_degrees(star), [3, 0, 0, 0])


def test_row_sums_weighted():
    a = SparseMatrix.from_edges([0, 0, 1], [1, 1, 0], 2)
    np.testing.assert_array_equal(row_sums(a), [2.0, 1.0])
    np.testing.assert_array_equal(out_degrees(a), [1, 1])


def test_scale_by_ones_is_identity(rng):
    a = SparseMatrix.from_dense(random_dense(rng, 6, 4))
    assert scale_rows(a, np.ones(6)) == a
    assert scale_cols(a, np.ones(4)) == a


def test_scale_rows_direct():
    a = SparseMatrix.from_dense(np.ones((2, 2)))
    np.testing.assert_array_equal(scale_rows(a, [2, 3]).to_dense(), [[2, 2], [3, 3]])


def test_scale_rows_and_cols_match_dense(rng):
    a_d = random_dense(rng, 20, 15)
    dr, dc = rng.normal(size=20), rng.normal(size=15)
    dr[3] = 0.0
    out = scale_cols(scale_rows(SparseMatrix.from_dense(a_d), dr), dc)
    out.validate()
    assert np.max(np.abs(out.to_dense() - np.diag(dr) @ a_d @ np.diag(dc))) <= 1e-12


@pytest.mark.parametrize("bad", [[1.0, np.inf], [np.nan, 1.0], [1.0]])
def test_scale_rejects_bad_factors(bad):
    with pytest.raises(InvalidInputError):
        scale_rows(SparseMatrix.identity(2), bad)
