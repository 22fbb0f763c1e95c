"""
Sparse linear-algebra kernel.

CSC matrices, triplet assembly, permutations, row-scaled sparse LU with
partial pivoting (SuperLU) and sparse LDL^T with diagonal pivots, falling
back to 1x1/2x2 Bunch-Kaufman pivots on small indefinite matrices.
Every KKT block, Jacobian and Hessian in battflow is a ``SparseMat``.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from battflow.exceptions import (
    AsymmetricMatrixError,
    LayoutError,
    SingularMatrixError,
    SparseAssemblyError,
)
from battflow.logger import get_logger

logger = get_logger(__name__)

SparseMat = sp.csc_matrix

PIVOT_THRESHOLD = 1e-13
SYMMETRY_TOLERANCE = 1e-12
STATIC_RESIDUAL = 1e-10
TWO_BY_TWO_LIMIT = 200
PROVIDER_ORDERINGS = ("NATURAL", "COLAMD", "MMD_AT_PLUS_A", "MMD_ATA")


# =============================================================================
# Assembly
# =============================================================================


def from_triplets(nrows, ncols, entries, keep_zeros=False):
    """
    Assemble a CSC matrix from (row, col, value) triplets.

    :param nrows: Number of rows
    :param ncols: Number of columns
    :param entries: Iterable of (row, col, value), or a (rows, cols, values)
        tuple of arrays
    :param keep_zeros: Retain explicitly stored zeros
    :return: SparseMat with duplicates summed and sorted row indices
    """
    if nrows < 0 or ncols < 0:
        raise SparseAssemblyError(f"Negative shape ({nrows}, {ncols})")
    rows, cols, vals = _split_triplets(entries)
    if rows.size:
        if rows.min() < 0 or rows.max() >= nrows:
            bad = int(rows[(rows < 0) | (rows >= nrows)][0])
            raise SparseAssemblyError(f"Row index {bad} out of range for {nrows} rows")
        if cols.min() < 0 or cols.max() >= ncols:
            bad = int(cols[(cols < 0) | (cols >= ncols)][0])
            raise SparseAssemblyError(
                f"Column index {bad} out of range for {ncols} columns"
            )
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols)).tocsc()
    mat.sum_duplicates()
    if not keep_zeros:
        mat.eliminate_zeros()
    mat.sort_indices()
    return mat


def _split_triplets(entries):
    if isinstance(entries, tuple) and len(entries) == 3 and not np.isscalar(entries[0]):
        rows, cols, vals = entries
    else:
        entries = list(entries)
        if not entries:
            return (
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=float),
            )
        rows, cols, vals = zip(*entries)
    rows = np.asarray(rows, dtype=np.int64).ravel()
    cols = np.asarray(cols, dtype=np.int64).ravel()
    vals = np.asarray(vals, dtype=float).ravel()
    if not (rows.size == cols.size == vals.size):
        raise SparseAssemblyError("Triplet arrays differ in length")
    return rows, cols, vals


def as_csc(matrix):
    """Convert anything sparse or dense to a sorted SparseMat."""
    mat = sp.csc_matrix(matrix)
    mat.sort_indices()
    return mat


def to_dense(matrix):
    """Return a dense ndarray copy."""
    if sp.issparse(matrix):
        return matrix.toarray()
    return np.array(matrix, dtype=float)


def is_valid_csc(matrix):
    """
    Check the CSC storage invariants.

    :param matrix: scipy CSC matrix
    :return: True when colptr, row indices and uniqueness rules hold
    """
    nrows, ncols = matrix.shape
    colptr = matrix.indptr
    if colptr.size != ncols + 1 or colptr[0] != 0 or colptr[-1] != matrix.nnz:
        return False
    if np.any(np.diff(colptr) < 0):
        return False
    for j in range(ncols):
        rows = matrix.indices[colptr[j]:colptr[j + 1]]
        if rows.size and (rows.max() >= nrows or np.any(np.diff(rows) <= 0)):
            return False
    return True


def max_abs(matrix):
    """Largest absolute entry, 0 for an empty matrix."""
    if sp.issparse(matrix):
        return float(abs(matrix).max()) if matrix.nnz else 0.0
    return float(np.max(np.abs(matrix))) if np.size(matrix) else 0.0


def pattern_key(matrix):
    """Hashable key of a CSC sparsity pattern."""
    mat = as_csc(matrix)
    return (mat.shape, hash(mat.indptr.tobytes()), hash(mat.indices.tobytes()))


# =============================================================================
# Permutations
# =============================================================================


@dataclass(frozen=True, eq=False)
class Permutation:
    """Bijection on [0, n). ``forward[i]`` is the new position of old index i."""

    forward: np.ndarray

    def __post_init__(self):
        forward = np.array(self.forward, dtype=np.int64)
        n = forward.size
        if n and (
            forward.min() < 0
            or forward.max() >= n
            or np.unique(forward).size != n
        ):
            raise ValueError("Permutation is not a bijection")
        forward.setflags(write=False)
        object.__setattr__(self, "forward", forward)

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n, dtype=np.int64))

    @classmethod
    def from_order(cls, order):
        """Build from the list of old indices taken in new-position order."""
        order = np.asarray(order, dtype=np.int64)
        forward = np.empty_like(order)
        forward[order] = np.arange(order.size, dtype=np.int64)
        return cls(forward)

    @property
    def size(self):
        return int(self.forward.size)

    @property
    def order(self):
        """Old index sitting at each new position."""
        order = np.empty_like(self.forward)
        order[self.forward] = np.arange(self.forward.size, dtype=np.int64)
        return order

    def inverse(self):
        return Permutation(self.order)

    def apply(self, vector):
        """Move entry i of ``vector`` to position forward[i]."""
        vector = np.asarray(vector)
        return vector[self.order]

    def unapply(self, vector):
        """Inverse of :meth:`apply`."""
        vector = np.asarray(vector)
        return vector[self.forward]

    def apply_symmetric(self, matrix):
        """Return P A P^T, i.e. ``A[order][:, order]``."""
        order = self.order
        return as_csc(sp.csc_matrix(matrix)[order, :][:, order])

    def is_identity(self):
        return bool(np.all(self.forward == np.arange(self.forward.size)))


# =============================================================================
# LU
# =============================================================================


@dataclass(frozen=True, eq=False)
class LuFactors:
    """
    Row-scaled, permuted LU factors.

    L @ U equals ``(diag(rowscale) @ A)[rowperm.order][:, colperm.order]``.
    """

    L: SparseMat
    U: SparseMat
    rowperm: Permutation
    colperm: Permutation
    rowscale: np.ndarray
    _superlu: object = field(default=None, repr=False, compare=False)
    _pre: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return int(self.rowscale.size)

    @property
    def nnz(self):
        return int(self.L.nnz + self.U.nnz)


def _row_scaling(matrix):
    row_max = np.zeros(matrix.shape[0])
    coo = matrix.tocoo()
    np.maximum.at(row_max, coo.row, np.abs(coo.data))
    zero_rows = np.flatnonzero(row_max == 0.0)
    if zero_rows.size:
        raise SingularMatrixError(
            f"Row {int(zero_rows[0])} is identically zero", column=None
        )
    return 1.0 / row_max


def lu_factor(matrix, ordering=None, threshold=PIVOT_THRESHOLD):
    """
    Factorize a square sparse matrix with row scaling and partial pivoting.

    :param matrix: Square matrix (any scipy sparse format or dense)
    :param ordering: Permutation applied symmetrically before factorization,
        a SuperLU ordering name, or None for the natural order
    :param threshold: Relative pivot magnitude below which the matrix is
        declared numerically singular
    :return: LuFactors
    """
    A = as_csc(matrix)
    n, m = A.shape
    if n != m:
        raise LayoutError(f"LU needs a square matrix, got {A.shape}")
    if n == 0:
        empty = sp.csc_matrix((0, 0))
        ident = Permutation.identity(0)
        return LuFactors(empty, empty, ident, ident, np.zeros(0))
    if max_abs(A) == 0.0:
        raise SingularMatrixError("Matrix is identically zero", column=0)

    rowscale = _row_scaling(A)
    B = as_csc(sp.diags(rowscale) @ A)

    if isinstance(ordering, str):
        spec = ordering.upper()
        if spec not in PROVIDER_ORDERINGS:
            raise ValueError(f"Unknown ordering: {ordering}")
        pre = None
        permuted = B
    else:
        spec = "NATURAL"
        if ordering is None:
            ordering = Permutation.identity(n)
        if ordering.size != n:
            raise LayoutError("Ordering size does not match the matrix")
        pre = ordering.order
        permuted = as_csc(B[pre, :][:, pre])

    try:
        superlu = splu(permuted, permc_spec=spec)
    except RuntimeError as err:
        column = _first_empty_column(permuted)
        if column is not None and pre is not None:
            column = int(pre[column])
        raise SingularMatrixError(f"LU failed: {err}", column=column) from err

    pivots = np.abs(superlu.U.diagonal())
    limit = threshold * max_abs(permuted)
    small = np.flatnonzero(~(pivots > limit))
    if small.size:
        k = int(small[0])
        col_in_permuted = int(np.flatnonzero(superlu.perm_c == k)[0])
        column = int(pre[col_in_permuted]) if pre is not None else col_in_permuted
        raise SingularMatrixError(
            f"Pivot {pivots[k]:.3e} below threshold {limit:.3e}", column=column
        )

    perm_r = np.asarray(superlu.perm_r, dtype=np.int64)
    perm_c = np.asarray(superlu.perm_c, dtype=np.int64)
    if pre is not None:
        qinv = np.empty(n, dtype=np.int64)
        qinv[pre] = np.arange(n)
        perm_r = perm_r[qinv]
        perm_c = perm_c[qinv]

    return LuFactors(
        L=as_csc(superlu.L),
        U=as_csc(superlu.U),
        rowperm=Permutation(perm_r),
        colperm=Permutation(perm_c),
        rowscale=rowscale,
        _superlu=superlu,
        _pre=pre,
    )


def _first_empty_column(matrix):
    counts = np.diff(matrix.indptr)
    empty = np.flatnonzero(counts == 0)
    return int(empty[0]) if empty.size else None


def lu_solve(factors, rhs):
    """
    Solve A x = b with factors from :func:`lu_factor`.

    :param factors: LuFactors
    :param rhs: Vector of length n or an n-by-k array
    :return: Solution with the same shape as ``rhs``
    """
    rhs = np.asarray(rhs, dtype=float)
    n = factors.n
    if rhs.shape[0] != n:
        raise LayoutError(f"Right-hand side has {rhs.shape[0]} rows, expected {n}")
    if n == 0:
        return rhs.copy()
    scaled = rhs * (factors.rowscale if rhs.ndim == 1 else factors.rowscale[:, None])
    pre = factors._pre
    if pre is None:
        return factors._superlu.solve(np.ascontiguousarray(scaled))
    y = factors._superlu.solve(np.ascontiguousarray(scaled[pre]))
    x = np.empty_like(y)
    x[pre] = y
    return x


# =============================================================================
# LDL^T
# =============================================================================


@dataclass(frozen=True, eq=False)
class LdlFactors:
    """
    Symmetric indefinite factors with 1x1 or 2x2 pivot blocks.

    L @ D @ L.T equals ``(S A S)[perm.order][:, perm.order]`` with
    ``S = diag(scale)``. Factors from static diagonal pivoting keep the
    SuperLU object for the solve; 2x2 pivoting keeps dense factors.
    """

    L: SparseMat
    D: SparseMat
    perm: Permutation
    scale: np.ndarray
    _superlu: object = field(default=None, repr=False, compare=False)
    _pre: np.ndarray = field(default=None, repr=False, compare=False)
    _dense_l: np.ndarray = field(default=None, repr=False, compare=False)
    _banded_d: np.ndarray = field(default=None, repr=False, compare=False)

    @property
    def n(self):
        return int(self.scale.size)

    @property
    def nnz(self):
        return int(self.L.nnz + self.D.nnz)

    @property
    def two_by_two(self):
        """True when the factors came from Bunch-Kaufman pivoting."""
        return self._superlu is None


def _static_ldl(P, limit):
    """
    Sparse L D L^T of ``P`` with diagonal pivots only.

    SuperLU runs in symmetric mode without threshold pivoting, so with an
    accepted factorization ``U = D L^T``. Returns None when a row interchange
    happened, a pivot is below ``limit`` or the reassembly residual exceeds
    STATIC_RESIDUAL.
    """
    try:
        superlu = splu(
            P, permc_spec="NATURAL", diag_pivot_thresh=0.0,
            options={"SymmetricMode": True},
        )
    except RuntimeError:
        return None
    if not np.array_equal(superlu.perm_r, superlu.perm_c):
        return None
    d = superlu.U.diagonal()
    if not np.all(np.isfinite(d)) or not np.min(np.abs(d)) > limit:
        return None
    L = as_csc(superlu.L)
    D = sp.diags(d, format="csc")
    q = Permutation(np.asarray(superlu.perm_c, dtype=np.int64)).order
    residual = L @ D @ L.T - P[q, :][:, q]
    if not max_abs(residual) <= STATIC_RESIDUAL * max_abs(P):
        return None
    return superlu, L, D, q


def _bunch_kaufman(dense, limit):
    lu, d, piv = scipy.linalg.ldl(dense, lower=True, hermitian=False)
    lower = lu[piv]
    n = dense.shape[0]
    banded = np.zeros((3, n))
    banded[1] = np.diag(d)
    banded[0, 1:] = np.diag(d, 1)
    banded[2, :-1] = np.diag(d, -1)
    k = 0
    while k < n:
        if k + 1 < n and d[k + 1, k] != 0.0:
            smallest = np.linalg.svd(d[k:k + 2, k:k + 2], compute_uv=False)[-1]
            if not smallest > limit:
                raise SingularMatrixError("Singular 2x2 pivot block", column=int(piv[k]))
            k += 2
        else:
            if not abs(d[k, k]) > limit:
                raise SingularMatrixError(
                    f"Pivot {d[k, k]:.3e} below threshold {limit:.3e}",
                    column=int(piv[k]),
                )
            k += 1
    return lower, d, piv, banded


def ldl_factor(matrix, ordering=None, threshold=PIVOT_THRESHOLD, two_by_two_limit=None):
    """
    Factorize a symmetric, possibly indefinite matrix as L D L^T.

    The matrix is scaled symmetrically and ordered with AMD, then factorized
    sparsely with diagonal pivots. When a diagonal pivot is unusable and the
    order is at most ``two_by_two_limit``, a Bunch-Kaufman factorization with
    1x1/2x2 pivots is used instead.

    :param matrix: Square symmetric matrix
    :param ordering: Fill-reducing Permutation; computed with AMD when None
    :param threshold: Relative pivot magnitude defining singularity
    :param two_by_two_limit: Largest order for 2x2 pivoting, default
        TWO_BY_TWO_LIMIT
    :return: LdlFactors
    :raises SingularMatrixError: singular, or diagonal pivoting failed above
        the 2x2 limit
    """
    from battflow.ordering import amd_order

    if two_by_two_limit is None:
        two_by_two_limit = TWO_BY_TWO_LIMIT
    A = as_csc(matrix)
    n, m = A.shape
    if n != m:
        raise LayoutError(f"LDL needs a square matrix, got {A.shape}")
    if n == 0:
        empty = sp.csc_matrix((0, 0))
        return LdlFactors(empty, empty, Permutation.identity(0), np.zeros(0))
    amax = max_abs(A)
    if amax == 0.0:
        raise SingularMatrixError("Matrix is identically zero", column=0)
    if max_abs(A - A.T) > SYMMETRY_TOLERANCE * amax:
        raise AsymmetricMatrixError("LDL factorization needs a symmetric matrix")

    scale = np.sqrt(_row_scaling(A))
    B = as_csc(sp.diags(scale) @ A @ sp.diags(scale))
    if ordering is None:
        ordering = amd_order(B)
    pre = ordering.order
    P = as_csc(B[pre, :][:, pre])
    P = as_csc(0.5 * (P + P.T))
    limit = threshold * max_abs(P)

    static = _static_ldl(P, limit)
    if static is not None:
        superlu, L, D, q = static
        return LdlFactors(
            L=L,
            D=D,
            perm=Permutation.from_order(pre[q]),
            scale=scale,
            _superlu=superlu,
            _pre=pre,
        )

    if n > two_by_two_limit:
        raise SingularMatrixError(
            f"Diagonal pivoting failed on order {n} above the 2x2 limit {two_by_two_limit}",
            column=None,
        )
    logger.debug("Diagonal pivoting failed on order %s, using 2x2 pivots", n)
    lower, d, piv, banded = _bunch_kaufman(P.toarray(), limit)
    return LdlFactors(
        L=as_csc(sp.csc_matrix(lower)),
        D=as_csc(sp.csc_matrix(d)),
        perm=Permutation.from_order(pre[piv]),
        scale=scale,
        _dense_l=lower,
        _banded_d=banded,
    )


def ldl_solve(factors, rhs):
    """
    Solve A x = b with factors from :func:`ldl_factor`.

    :param factors: LdlFactors
    :param rhs: Vector of length n or an n-by-k array
    :return: Solution with the same shape as ``rhs``
    """
    rhs = np.asarray(rhs, dtype=float)
    n = factors.n
    if rhs.shape[0] != n:
        raise LayoutError(f"Right-hand side has {rhs.shape[0]} rows, expected {n}")
    if n == 0:
        return rhs.copy()
    scale = factors.scale if rhs.ndim == 1 else factors.scale[:, None]
    if factors._superlu is not None:
        pre = factors._pre
        w = factors._superlu.solve(np.ascontiguousarray((rhs * scale)[pre]))
        u = np.empty_like(w)
        u[pre] = w
        return u * scale
    order = factors.perm.order
    c = (rhs * scale)[order]
    y = scipy.linalg.solve_triangular(
        factors._dense_l, c, lower=True, unit_diagonal=True
    )
    z = scipy.linalg.solve_banded((1, 1), factors._banded_d, y)
    w = scipy.linalg.solve_triangular(
        factors._dense_l.T, z, lower=False, unit_diagonal=True
    )
    u = np.empty_like(w)
    u[order] = w
    return u * scale
