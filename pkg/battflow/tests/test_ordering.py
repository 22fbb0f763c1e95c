"""
Tests for the approximate minimum degree ordering and its cache.
"""

import unittest

import numpy as np
import scipy.sparse as sp

from battflow.exceptions import LayoutError
from battflow.ordering import OrderingCache, amd_order
from battflow.sparse import Permutation, lu_factor


def arrow(n, hub=0):
    """Diagonally dominant arrow matrix whose dense row/column sits at ``hub``."""
    A = sp.lil_matrix((n, n))
    A.setdiag(float(n))
    for k in range(n):
        if k != hub:
            A[hub, k] = 1.0
            A[k, hub] = 1.0
    return sp.csc_matrix(A)


class TestAmdOrder(unittest.TestCase):
    def test_returns_permutation(self):
        """The ordering is a bijection on the matrix size."""
        perm = amd_order(arrow(6))
        self.assertIsInstance(perm, Permutation)
        self.assertEqual(sorted(perm.order.tolist()), list(range(6)))

    def test_hub_eliminated_last(self):
        """Leaves of an arrow come first, the hub last."""
        for hub in (0, 2, 4):
            with self.subTest(hub=hub):
                perm = amd_order(arrow(5, hub))
                self.assertEqual(int(perm.order[-1]), hub)

    def test_reduces_fill_on_arrows(self):
        """AMD never yields more factor nonzeros than the natural order."""
        for n in range(3, 31):
            with self.subTest(n=n):
                A = arrow(n)
                natural = lu_factor(A, Permutation.identity(n)).nnz
                ordered = lu_factor(A, amd_order(A)).nnz
                self.assertLessEqual(ordered, natural)

    def test_natural_order_fills_arrow(self):
        """Eliminating the hub first makes the factors dense."""
        n = 10
        A = arrow(n)
        self.assertGreater(
            lu_factor(A, Permutation.identity(n)).nnz,
            lu_factor(A, amd_order(A)).nnz,
        )

    def test_deterministic(self):
        """The same pattern always gives the same ordering."""
        rng = np.random.default_rng(1)
        A = sp.random(30, 30, density=0.1, random_state=rng, format="csc")
        A = A + A.T + sp.identity(30)
        np.testing.assert_array_equal(amd_order(A).order, amd_order(A).order)

    def test_diagonal_pattern(self):
        """A diagonal matrix has nothing to reorder around."""
        perm = amd_order(sp.identity(4, format="csc"))
        self.assertEqual(perm.size, 4)

    def test_empty(self):
        """An empty pattern gives the empty permutation."""
        self.assertEqual(amd_order(sp.csc_matrix((0, 0))).size, 0)

    def test_non_square(self):
        """Rectangular patterns are rejected."""
        with self.assertRaises(LayoutError):
            amd_order(sp.csc_matrix((2, 3)))


class TestOrderingCache(unittest.TestCase):
    def test_computes_once_per_key(self):
        """A repeated key reuses the stored ordering."""
        cache = OrderingCache()
        first = cache.get("static", arrow(5))
        second = cache.get("static", arrow(5))
        self.assertIs(first, second)
        self.assertEqual(cache.computed, 1)
        self.assertEqual(len(cache), 1)

    def test_new_key_computes_again(self):
        """Each distinct key triggers one computation."""
        cache = OrderingCache()
        cache.get("a", arrow(4))
        cache.get("b", arrow(6, hub=3))
        cache.get("a", arrow(4))
        self.assertEqual(cache.computed, 2)
        self.assertEqual(len(cache), 2)
