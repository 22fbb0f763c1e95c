"""
Approximate minimum degree ordering.

Quotient-graph elimination with element absorption and approximate external
degrees. The input pattern is symmetrized as A + A^T; the diagonal is ignored.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import heapq

import numpy as np
import scipy.sparse as sp

from battflow.exceptions import LayoutError
from battflow.logger import get_logger
from battflow.sparse import Permutation

logger = get_logger(__name__)


class OrderingCache:
    """
    Memo of AMD orderings keyed by sparsity pattern.

    ``computed`` counts the orderings actually produced, which the KKT layer
    uses to show that a static structure is ordered only once per solve.
    """

    def __init__(self):
        self._orderings = {}
        self.computed = 0

    def get(self, key, pattern):
        """
        Return the cached ordering for ``key``, computing it from ``pattern``.

        :param key: Hashable pattern key
        :param pattern: Matrix whose pattern is ordered on a miss
        :return: Permutation
        """
        ordering = self._orderings.get(key)
        if ordering is None:
            ordering = amd_order(pattern)
            self._orderings[key] = ordering
            self.computed += 1
        return ordering

    def __len__(self):
        return len(self._orderings)


def _adjacency(pattern):
    A = sp.csc_matrix(pattern)
    n, m = A.shape
    if n != m:
        raise LayoutError(f"AMD needs a square pattern, got {A.shape}")
    S = sp.csc_matrix((np.ones(A.nnz), A.indices, A.indptr), shape=A.shape)
    S = (S + S.T).tocsr()
    S.setdiag(0)
    S.eliminate_zeros()
    S.sort_indices()
    return [set(S.indices[S.indptr[i]:S.indptr[i + 1]].tolist()) for i in range(n)]


def amd_order(pattern):
    """
    Compute a fill-reducing symmetric ordering.

    :param pattern: Square sparse matrix; only its pattern is used
    :return: Permutation whose ``order`` lists the elimination sequence
    """
    adjacency = _adjacency(pattern)
    n = len(adjacency)
    if n == 0:
        return Permutation.identity(0)

    original_degree = [len(neigh) for neigh in adjacency]
    degree = list(original_degree)
    elements_of = [set() for _ in range(n)]
    element_vars = {}
    eliminated = [False] * n
    order = []

    heap = [(degree[i], original_degree[i], i) for i in range(n)]
    heapq.heapify(heap)

    while heap:
        deg, _, pivot = heapq.heappop(heap)
        if eliminated[pivot] or deg != degree[pivot]:
            continue

        # New element: variables reachable from the pivot
        absorbed = elements_of[pivot]
        reach = set(adjacency[pivot])
        for element in absorbed:
            reach |= element_vars.pop(element)
        reach.discard(pivot)
        eliminated[pivot] = True
        order.append(pivot)
        element_vars[pivot] = reach
        elements_of[pivot] = set()
        adjacency[pivot] = set()

        # |Le \ Lp| for every element touching the new element
        external = {}
        for var in reach:
            for element in elements_of[var]:
                if element in absorbed:
                    continue
                if element not in external:
                    external[element] = len(element_vars[element])
                external[element] -= 1

        # Aggressive absorption of elements covered by the new one
        for element, outside in external.items():
            if outside == 0:
                for var in element_vars.pop(element):
                    elements_of[var].discard(element)

        remaining = n - len(order)
        reach_size = len(reach)
        for var in reach:
            elements = elements_of[var]
            elements -= absorbed
            elements.add(pivot)
            neighbours = adjacency[var]
            neighbours -= reach
            neighbours.discard(pivot)
            approx = len(neighbours) + reach_size - 1
            for element in elements:
                if element != pivot:
                    approx += external.get(element, 0)
            new_degree = min(remaining - 1, degree[var] + reach_size - 1, approx)
            new_degree = max(new_degree, 0)
            if new_degree != degree[var]:
                degree[var] = new_degree
                heapq.heappush(heap, (new_degree, original_degree[var], var))

    logger.debug("AMD ordered %s vertices", n)
    return Permutation.from_order(order)
