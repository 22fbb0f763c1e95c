"""
Tests for sparse assembly, permutations and the LU/LDL factorizations.
"""

import unittest

import numpy as np
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from battflow.exceptions import (
    AsymmetricMatrixError,
    LayoutError,
    SingularMatrixError,
    SparseAssemblyError,
)
from battflow.sparse import (
    Permutation,
    from_triplets,
    is_valid_csc,
    ldl_factor,
    ldl_solve,
    lu_factor,
    lu_solve,
    pattern_key,
    to_dense,
)


def _random_nonsingular(n, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((n, n)) < 0.3
    A = np.where(mask, rng.normal(size=(n, n)), 0.0)
    A += np.diag(n + np.abs(A).sum(axis=1))
    return sp.csc_matrix(A)


triplet_lists = st.lists(
    st.tuples(
        st.integers(0, 7),
        st.integers(0, 5),
        st.floats(-10, 10, allow_nan=False, allow_infinity=False),
    ),
    max_size=40,
)


class TestFromTriplets(unittest.TestCase):
    def test_empty_triplets(self):
        """No triplets give an empty matrix of the requested shape."""
        mat = from_triplets(3, 4, [])
        self.assertEqual(mat.shape, (3, 4))
        self.assertEqual(mat.nnz, 0)

    def test_duplicates_are_summed(self):
        """Repeated positions add up."""
        mat = from_triplets(2, 2, [(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)])
        self.assertEqual(mat[0, 1], 3.0)
        self.assertEqual(mat.nnz, 2)

    def test_row_out_of_range(self):
        """A row index past nrows is rejected."""
        with self.assertRaises(SparseAssemblyError):
            from_triplets(2, 2, [(2, 0, 1.0)])

    def test_column_out_of_range(self):
        """A negative column index is rejected."""
        with self.assertRaises(SparseAssemblyError):
            from_triplets(2, 2, [(0, -1, 1.0)])

    def test_cancelled_entries_dropped_by_default(self):
        """Entries summing to zero are removed unless kept explicitly."""
        entries = [(0, 0, 1.0), (0, 0, -1.0)]
        self.assertEqual(from_triplets(1, 1, entries).nnz, 0)
        kept = from_triplets(1, 1, entries, keep_zeros=True)
        self.assertEqual(kept.nnz, 1)
        self.assertEqual(kept[0, 0], 0.0)

    def test_array_triplets(self):
        """A (rows, cols, vals) tuple of arrays is accepted."""
        mat = from_triplets(2, 2, (np.array([0, 1]), np.array([1, 0]), np.array([5.0, 6.0])))
        np.testing.assert_array_equal(to_dense(mat), [[0.0, 5.0], [6.0, 0.0]])

    @settings(max_examples=50, deadline=None)
    @given(triplet_lists)
    def test_matches_dense_accumulation(self, entries):
        """Assembly equals accumulating the triplets into a dense array."""
        dense = np.zeros((8, 6))
        for i, j, v in entries:
            dense[i, j] += v
        mat = from_triplets(8, 6, entries)
        self.assertTrue(is_valid_csc(mat))
        np.testing.assert_allclose(to_dense(mat), dense, atol=1e-12)

    def test_pattern_key_ignores_values(self):
        """Matrices with equal patterns share a key."""
        a = from_triplets(2, 2, [(0, 0, 1.0), (1, 1, 2.0)])
        b = from_triplets(2, 2, [(0, 0, 7.0), (1, 1, -3.0)])
        c = from_triplets(2, 2, [(0, 1, 1.0), (1, 1, 2.0)])
        self.assertEqual(pattern_key(a), pattern_key(b))
        self.assertNotEqual(pattern_key(a), pattern_key(c))


class TestPermutation(unittest.TestCase):
    def test_apply_moves_entries_forward(self):
        """Entry i lands at position forward[i]."""
        perm = Permutation([2, 0, 1])
        np.testing.assert_array_equal(perm.apply(np.array([10, 20, 30])), [20, 30, 10])

    def test_unapply_inverts_apply(self):
        """unapply(apply(v)) == v."""
        perm = Permutation.from_order([3, 1, 0, 2])
        v = np.arange(4.0) * 1.5
        np.testing.assert_array_equal(perm.unapply(perm.apply(v)), v)
        np.testing.assert_array_equal(perm.inverse().apply(perm.apply(v)), v)

    def test_from_order_lists_old_indices(self):
        """order round-trips through from_order."""
        perm = Permutation.from_order([2, 0, 1])
        np.testing.assert_array_equal(perm.order, [2, 0, 1])
        np.testing.assert_array_equal(perm.apply(np.array([10, 20, 30])), [30, 10, 20])

    def test_apply_symmetric(self):
        """apply_symmetric(A) == A[order][:, order]."""
        A = np.arange(16.0).reshape(4, 4)
        perm = Permutation.from_order([1, 3, 0, 2])
        expected = A[[1, 3, 0, 2]][:, [1, 3, 0, 2]]
        np.testing.assert_array_equal(to_dense(perm.apply_symmetric(sp.csc_matrix(A))), expected)

    def test_not_a_bijection(self):
        """Repeated or out-of-range targets are rejected."""
        with self.assertRaises(ValueError):
            Permutation([0, 0, 1])
        with self.assertRaises(ValueError):
            Permutation([0, 3])

    def test_identity(self):
        """Identity permutation reports itself."""
        self.assertTrue(Permutation.identity(5).is_identity())
        self.assertFalse(Permutation([1, 0]).is_identity())


class TestLu(unittest.TestCase):
    def test_identity_solve(self):
        """Solving with the identity returns the right-hand side."""
        factors = lu_factor(sp.identity(4, format="csc"))
        b = np.array([1.0, -2.0, 3.0, 0.5])
        np.testing.assert_allclose(lu_solve(factors, b), b)
        self.assertLessEqual(factors.nnz, 8)

    def test_two_by_two(self):
        """[[2, 1], [1, 2]] x = [3, 3] gives x = [1, 1]."""
        factors = lu_factor(sp.csc_matrix([[2.0, 1.0], [1.0, 2.0]]))
        np.testing.assert_allclose(lu_solve(factors, np.array([3.0, 3.0])), [1.0, 1.0])

    def test_zero_matrix_is_singular(self):
        """An all-zero matrix fails with the pivot column."""
        with self.assertRaises(SingularMatrixError) as ctx:
            lu_factor(sp.csc_matrix((3, 3)))
        self.assertIsNotNone(ctx.exception.column)

    def test_rank_deficient_is_singular(self):
        """Two equal rows are singular."""
        with self.assertRaises(SingularMatrixError):
            lu_factor(sp.csc_matrix([[1.0, 1.0], [1.0, 1.0]]))

    def test_non_square(self):
        """Rectangular input is a layout error."""
        with self.assertRaises(LayoutError):
            lu_factor(sp.csc_matrix((2, 3)))

    def test_unknown_ordering_name(self):
        """Ordering names are checked."""
        with self.assertRaises(ValueError):
            lu_factor(sp.identity(2, format="csc"), "NOPE")

    def test_random_matches_dense_solve(self):
        """Sparse LU agrees with numpy on diagonally dominant matrices."""
        for seed in range(5):
            with self.subTest(seed=seed):
                A = _random_nonsingular(20, seed)
                b = np.random.default_rng(seed).normal(size=20)
                expected = np.linalg.solve(A.toarray(), b)
                for ordering in (None, "NATURAL", Permutation.from_order(np.arange(20)[::-1])):
                    x = lu_solve(lu_factor(A, ordering), b)
                    np.testing.assert_allclose(x, expected, rtol=1e-9, atol=1e-9)

    def test_factors_reassemble(self):
        """L U equals the scaled, permuted matrix."""
        A = _random_nonsingular(12, 3)
        factors = lu_factor(A)
        scaled = np.diag(factors.rowscale) @ A.toarray()
        permuted = scaled[factors.rowperm.order][:, factors.colperm.order]
        np.testing.assert_allclose(
            (factors.L @ factors.U).toarray(), permuted, atol=1e-10
        )

    def test_matrix_right_hand_side(self):
        """Several right-hand sides are solved column by column."""
        A = _random_nonsingular(6, 8)
        B = np.random.default_rng(8).normal(size=(6, 3))
        X = lu_solve(lu_factor(A), B)
        np.testing.assert_allclose(A @ X, B, atol=1e-10)


class TestLdl(unittest.TestCase):
    def test_diagonal(self):
        """diag(2, 3) x = [2, 3] gives [1, 1]."""
        factors = ldl_factor(sp.diags([2.0, 3.0], format="csc"))
        np.testing.assert_allclose(ldl_solve(factors, np.array([2.0, 3.0])), [1.0, 1.0])

    def test_indefinite_two_by_two(self):
        """A zero-diagonal symmetric matrix needs a 2x2 pivot."""
        A = sp.csc_matrix([[0.0, 1.0], [1.0, 0.0]])
        factors = ldl_factor(A)
        self.assertTrue(factors.two_by_two)
        x = ldl_solve(factors, np.array([2.0, 5.0]))
        np.testing.assert_allclose(x, [5.0, 2.0])

    def test_banded_indefinite_stays_sparse(self):
        """A banded indefinite matrix of order 1900 factorizes without densifying."""
        n, band = 1900, 10
        rng = np.random.default_rng(3)
        diagonals = [rng.uniform(-1.0, 1.0, n - k) for k in range(1, band + 1)]
        off = sp.diags(diagonals, list(range(1, band + 1)), shape=(n, n))
        signs = np.where(np.arange(n) % 3 == 0, -1.0, 1.0)
        A = sp.csc_matrix(off + off.T + sp.diags(signs * (2.0 * band + 1.0)))
        factors = ldl_factor(A)
        self.assertFalse(factors.two_by_two)
        self.assertLess(factors.L.nnz, 0.02 * n * n)
        self.assertTrue(np.any(factors.D.diagonal() < 0.0))
        b = rng.normal(size=n)
        np.testing.assert_allclose(A @ ldl_solve(factors, b), b, atol=1e-9)

    def test_two_by_two_pivots_limited_by_order(self):
        """Zero-diagonal systems above the 2x2 limit are reported singular."""
        A = sp.block_diag([sp.csc_matrix([[0.0, 1.0], [1.0, 0.0]])] * 150, format="csc")
        with self.assertRaises(SingularMatrixError):
            ldl_factor(A, two_by_two_limit=200)
        factors = ldl_factor(A, two_by_two_limit=300)
        b = np.arange(300, dtype=float)
        np.testing.assert_allclose(A @ ldl_solve(factors, b), b, atol=1e-12)

    def test_asymmetric_rejected(self):
        """LDL refuses an asymmetric matrix."""
        with self.assertRaises(AsymmetricMatrixError):
            ldl_factor(sp.csc_matrix([[1.0, 2.0], [0.0, 1.0]]))

    def test_zero_matrix_is_singular(self):
        """An all-zero matrix is singular."""
        with self.assertRaises(SingularMatrixError):
            ldl_factor(sp.csc_matrix((2, 2)))

    def test_singular(self):
        """A rank-one symmetric matrix is singular."""
        with self.assertRaises(SingularMatrixError):
            ldl_factor(sp.csc_matrix([[1.0, 1.0], [1.0, 1.0]]))

    def test_factors_reassemble(self):
        """L D L^T equals the scaled, permuted matrix."""
        A = _random_nonsingular(10, 4)
        A = sp.csc_matrix(A + A.T)
        factors = ldl_factor(A)
        S = np.diag(factors.scale)
        scaled = S @ A.toarray() @ S
        order = factors.perm.order
        rebuilt = (factors.L @ factors.D @ factors.L.T).toarray()
        np.testing.assert_allclose(rebuilt, scaled[order][:, order], atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(2, 15), st.integers(0, 10_000))
    def test_agrees_with_lu(self, n, seed):
        """LDL and LU solve the same symmetric system to the same answer."""
        A = _random_nonsingular(n, seed)
        A = sp.csc_matrix(A + A.T)
        b = np.random.default_rng(seed).normal(size=n)
        x_ldl = ldl_solve(ldl_factor(A), b)
        x_lu = lu_solve(lu_factor(A), b)
        np.testing.assert_allclose(x_ldl, x_lu, rtol=1e-8, atol=1e-8)
        np.testing.assert_allclose(A @ x_ldl, b, atol=1e-8)
