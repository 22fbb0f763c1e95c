"""
Block-arrowhead KKT systems and their two solvers.

The reduced Newton system ``[[M, G_X^T], [G_X, 0]]`` is reordered so that all
unknowns of step t (the primal step, the power-balance multipliers and the
pinned-row multipliers) form one diagonal block ``Upsilon_t``, and the storage
multipliers of every step form the border. The Schur backend factorizes each
block, reduces the border to ``sigma_c`` and back-substitutes; the direct
backend factorizes the whole bordered matrix at once.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from battflow import logic
from battflow.exceptions import LayoutError, SingularMatrixError, SparseAssemblyError
from battflow.formulation import session_links
from battflow.logger import get_logger
from battflow.ordering import OrderingCache, amd_order
from battflow.sparse import (
    Permutation,
    as_csc,
    ldl_factor,
    ldl_solve,
    lu_factor,
    lu_solve,
    pattern_key,
)

logger = get_logger(__name__)

BACKENDS = ("schur", "direct-lu")
PATTERN_DROP = 1e-13


# =============================================================================
# Arrowhead system
# =============================================================================


@dataclass(frozen=True, eq=False)
class ArrowheadSystem:
    """Diagonal blocks, coupling borders and right-hand sides of one Newton step."""

    upsilon: list
    rho: list
    zeta: list
    gamma: np.ndarray
    perm_to_original: Permutation
    structure_keys: list = field(default_factory=list)

    @property
    def T(self):
        return len(self.upsilon)

    @property
    def n_gs(self):
        return int(self.gamma.size)

    @property
    def block_sizes(self):
        return [int(block.shape[0]) for block in self.upsilon]

    @property
    def size(self):
        return sum(self.block_sizes) + self.n_gs

    def assemble(self):
        """Full bordered matrix in arrowhead order."""
        n_gs = self.n_gs
        diagonal = sp.block_diag(self.upsilon, format="csc") if self.upsilon else sp.csc_matrix((0, 0))
        if n_gs == 0:
            return as_csc(diagonal)
        border = sp.hstack(self.rho, format="csc")
        matrix = sp.bmat(
            [[diagonal, border.T], [border, sp.csc_matrix((n_gs, n_gs))]], format="csc"
        )
        return as_csc(matrix)

    def rhs(self):
        return np.concatenate(self.zeta + [self.gamma]) if self.zeta else self.gamma.copy()

    def to_original(self, omega, delta_lambda_s):
        """Map block solutions back to the (dX, dLambda) ordering."""
        arrow = np.concatenate(list(omega) + [delta_lambda_s])
        return self.perm_to_original.apply(arrow)


def structure_key(problem, t):
    """Hashable description of everything that shapes the pattern of Upsilon_t."""
    cons = problem.cons
    return (
        cons.pinned[t].tobytes(),
        cons.upper[t].tobytes(),
        cons.lower[t].tobytes(),
    )


def reorder_arrowhead(problem, m_blocks, g_x, n, g):
    """
    Reorder the reduced Newton system into arrowhead form.

    :param problem: Problem
    :param m_blocks: Per-step (1,1) blocks M_t
    :param g_x: Equality Jacobian (N_g x N_x)
    :param n: Reduced gradient N (length N_x)
    :param g: Equality residuals (length N_g)
    :return: ArrowheadSystem
    """
    layout, cons = problem.vars, problem.cons
    T, n_xt, n_x = layout.T, layout.n_xt, layout.n_x
    if len(m_blocks) != T or g_x.shape != (cons.N_g, n_x):
        raise LayoutError("Newton system does not match the problem layout")
    if n.shape != (n_x,) or g.shape != (cons.N_g,):
        raise LayoutError("Right-hand side does not match the problem layout")

    g_csr = sp.csr_matrix(g_x)
    gs_rows = np.arange(cons.N_gn + cons.N_gl, cons.N_g)
    storage = g_csr[gs_rows].tocsc()
    upsilon, rho, zeta, forward = [], [], [], []
    for t in range(T):
        block = layout.block(t)
        rows = np.r_[cons.gn_rows(t), cons.gl_rows(t)]
        border = g_csr[rows][:, block]
        m_t = sp.csc_matrix(m_blocks[t])
        n_rows = rows.size
        upsilon.append(as_csc(sp.bmat(
            [[m_t, border.T], [border, sp.csc_matrix((n_rows, n_rows))]], format="csc"
        )))
        coupling = storage[:, block]
        rho.append(as_csc(sp.hstack(
            [coupling, sp.csc_matrix((cons.N_gs, n_rows))], format="csc"
        )))
        zeta.append(-np.r_[n[block], g[rows]])
        forward.append(np.r_[np.arange(block.start, block.stop), n_x + rows])
    forward.append(n_x + gs_rows)
    return ArrowheadSystem(
        upsilon=upsilon,
        rho=rho,
        zeta=zeta,
        gamma=-g[gs_rows],
        perm_to_original=Permutation(np.concatenate(forward)),
        structure_keys=[structure_key(problem, t) for t in range(T)],
    )


def original_matrix(m_global, g_x):
    """The reduced Newton matrix in its original ordering."""
    n_g = g_x.shape[0]
    return as_csc(sp.bmat(
        [[sp.csc_matrix(m_global), sp.csc_matrix(g_x).T], [g_x, sp.csc_matrix((n_g, n_g))]],
        format="csc",
    ))


# =============================================================================
# Schur complement pattern
# =============================================================================


@dataclass(frozen=True, eq=False)
class SchurPattern:
    """Predicted nonzero positions of sigma_c, column-major keys ``col * N + row``."""

    per_block: list
    keys: np.ndarray
    n: int

    @property
    def total(self):
        return int(self.keys.size)

    @property
    def rows(self):
        return self.keys % self.n

    @property
    def cols(self):
        return self.keys // self.n

    def lookup(self, rows, cols):
        """
        Slots of (rows, cols) in ``keys``.

        :raises SparseAssemblyError: a position is not in the predicted pattern
        """
        wanted = np.asarray(cols, dtype=np.int64) * self.n + np.asarray(rows, dtype=np.int64)
        slots = np.searchsorted(self.keys, wanted)
        slots = np.minimum(slots, max(self.keys.size - 1, 0))
        hit = self.keys.size > 0
        found = (self.keys[slots] == wanted) if hit else np.zeros(wanted.shape, dtype=bool)
        if not np.all(found):
            missed = np.flatnonzero(~np.asarray(found).ravel())[0]
            row = int(np.ravel(rows)[missed])
            col = int(np.ravel(cols)[missed])
            raise SparseAssemblyError(f"Schur entry ({row}, {col}) is outside the predicted pattern")
        return slots

    def contains(self, rows, cols):
        """Boolean mask of the (rows, cols) positions in the predicted pattern."""
        wanted = np.asarray(cols, dtype=np.int64) * self.n + np.asarray(rows, dtype=np.int64)
        return np.isin(wanted, self.keys)


def _block_positions(active, link, t, n_y, T):
    rows, cols = [], []
    here = t * n_y + np.arange(n_y)
    rows.append(here)
    cols.append(here)
    on = here[active[:, t]]
    if on.size > 1:
        a, b = np.meshgrid(on, on, indexing="ij")
        off = a != b
        rows.append(a[off])
        cols.append(b[off])
    if t + 1 < T:
        linked = np.flatnonzero(link[:, t + 1])
        nxt = (t + 1) * n_y + linked
        cur = t * n_y + linked
        rows += [nxt, cur, nxt]
        cols += [nxt, nxt, cur]
    return np.concatenate(rows), np.concatenate(cols)


def predict_schur_nnz(avbp, conch, condi, link=None):
    """
    Predict the nonzero positions of every S_t and of sigma_c.

    :param avbp: Active-power availability (n_y x T)
    :param conch: Charge availability
    :param condi: Discharge availability
    :param link: SOC link matrix; derived from ``avbp`` when None
    :return: SchurPattern
    """
    avbp = np.asarray(avbp) == 1
    n_y, T = avbp.shape
    active = avbp & ((np.asarray(conch) == 1) | (np.asarray(condi) == 1))
    if link is None:
        link = session_links(avbp.astype(np.int8))
    n = n_y * T
    per_block, all_keys = [], []
    for t in range(T):
        rows, cols = _block_positions(active, link, t, n_y, T)
        keys = np.unique(cols.astype(np.int64) * n + rows)
        per_block.append(int(keys.size))
        all_keys.append(keys)
    keys = np.unique(np.concatenate(all_keys)) if all_keys else np.zeros(0, dtype=np.int64)
    return SchurPattern(per_block=per_block, keys=keys, n=n)


# =============================================================================
# Schur backend
# =============================================================================


@dataclass(eq=False)
class FactorCache:
    """Block LU factors, the reduced Schur system and the factor nnz ledger."""

    blocks: list
    orderings: list
    coupling_rows: list
    schur: sp.csc_matrix
    schur_rhs: np.ndarray
    schur_factors: object
    schur_uses_lu: bool
    pattern: SchurPattern
    ledger: dict


def schur_factorize(
    system,
    static_structure,
    pattern,
    ordering_cache=None,
    two_by_two_limit=None,
):
    """
    Factorize every diagonal block and the Schur complement of the border.

    Entries of S_t below PATTERN_DROP relative to max|S_t| are cancellation
    noise and are not scattered; any other entry must sit in ``pattern``.

    :param system: ArrowheadSystem
    :param static_structure: Reuse one ordering for every block
    :param pattern: SchurPattern of this problem
    :param ordering_cache: OrderingCache shared across the iterations of a solve
    :param two_by_two_limit: Largest sigma_c order allowed 2x2 LDL pivots
    :return: FactorCache
    :raises SparseAssemblyError: S_t has a nonzero outside the predicted pattern
    """
    if ordering_cache is None:
        ordering_cache = OrderingCache()
    if two_by_two_limit is None:
        two_by_two_limit = logic.get_setting_value("ldl_two_by_two_limit")
    n_gs = system.n_gs
    if pattern.n != n_gs:
        raise LayoutError("Schur pattern does not match the coupling size")

    data = np.zeros(pattern.total)
    sigma_l = np.zeros(n_gs)
    blocks, orderings, coupling_rows, block_nnz = [], [], [], []
    for t in range(system.T):
        upsilon = system.upsilon[t]
        key = "static" if static_structure else system.structure_keys[t]
        ordering = ordering_cache.get(key, upsilon)
        try:
            factors = lu_factor(upsilon, ordering)
        except SingularMatrixError as err:
            raise SingularMatrixError(
                "Diagonal block is singular", column=err.column, block=t
            ) from err
        blocks.append(factors)
        orderings.append(ordering)
        block_nnz.append(factors.nnz)

        rho = sp.csr_matrix(system.rho[t])
        rows = np.flatnonzero(np.diff(rho.indptr))
        coupling_rows.append(rows)
        if rows.size == 0:
            continue
        border = rho[rows]
        rhs = np.column_stack([border.T.toarray(), system.zeta[t]])
        solved = lu_solve(factors, rhs)
        product = -(border @ solved)
        s_t = product[:, :-1]
        s_t = 0.5 * (s_t + s_t.T)
        sigma_l[rows] += product[:, -1]

        a, b = np.meshgrid(rows, rows, indexing="ij")
        values = s_t.ravel()
        keep = np.abs(values) > PATTERN_DROP * max(np.max(np.abs(values)), 1.0)
        keep |= pattern.contains(a.ravel(), b.ravel())
        slots = pattern.lookup(a.ravel()[keep], b.ravel()[keep])
        np.add.at(data, slots, values[keep])

    cols = pattern.cols
    indptr = np.zeros(n_gs + 1, dtype=np.int64)
    np.add.at(indptr, cols + 1, 1)
    indptr = np.cumsum(indptr)
    sigma_c = sp.csc_matrix((data, pattern.rows, indptr), shape=(n_gs, n_gs))

    schur_uses_lu = False
    schur_factors = None
    schur_nnz = 0
    if n_gs:
        try:
            schur_factors = ldl_factor(sigma_c, two_by_two_limit=two_by_two_limit)
        except SingularMatrixError as err:
            logger.warning(
                "LDL of the order %s Schur complement failed (%s), using LU", n_gs, err
            )
            schur_uses_lu = True
            try:
                schur_factors = lu_factor(sigma_c, amd_order(sigma_c))
            except SingularMatrixError as lu_err:
                raise SingularMatrixError(
                    "Schur complement is singular", column=lu_err.column
                ) from lu_err
        schur_nnz = schur_factors.nnz

    ledger = {
        "blocks": block_nnz,
        "schur": int(schur_nnz),
        "peak": int(sum(block_nnz) + schur_nnz),
    }
    return FactorCache(
        blocks=blocks,
        orderings=orderings,
        coupling_rows=coupling_rows,
        schur=sigma_c,
        schur_rhs=sigma_l,
        schur_factors=schur_factors,
        schur_uses_lu=schur_uses_lu,
        pattern=pattern,
        ledger=ledger,
    )


def schur_solve(cache, system):
    """
    Forward and backward substitution through the Schur factors.

    :param cache: FactorCache from :func:`schur_factorize` on ``system``
    :param system: ArrowheadSystem
    :return: Tuple (delta_lambda_s, list of delta_omega_t)
    """
    if len(cache.blocks) != system.T or cache.schur.shape[0] != system.n_gs:
        raise LayoutError("Factor cache does not match the system")
    if system.n_gs:
        xi = system.gamma + cache.schur_rhs
        solve = lu_solve if cache.schur_uses_lu else ldl_solve
        delta_lambda = solve(cache.schur_factors, xi)
    else:
        delta_lambda = np.zeros(0)
    omega = []
    for t in range(system.T):
        kappa = system.zeta[t]
        if system.n_gs:
            kappa = kappa - system.rho[t].T @ delta_lambda
        omega.append(lu_solve(cache.blocks[t], kappa))
    return delta_lambda, omega


# =============================================================================
# Direct backend
# =============================================================================


def direct_factorize(system, ordering=None, ordering_cache=None):
    """
    LU factors of the whole bordered matrix.

    The default ``AMD`` ordering is computed on the assembled matrix and
    applied symmetrically, so the direct and Schur backends are compared under
    the same fill-reducing rule. SuperLU's own column orderings stay
    available by name.

    :param system: ArrowheadSystem
    :param ordering: ``AMD``, a SuperLU ordering name, a Permutation, or None
        for the ``direct_ordering`` setting
    :param ordering_cache: OrderingCache reused across iterations with the
        same pattern
    :return: LuFactors
    """
    if ordering is None:
        ordering = logic.get_setting_value("direct_ordering")
    matrix = system.assemble()
    if isinstance(ordering, str) and ordering.upper() == "AMD":
        if ordering_cache is None:
            ordering_cache = OrderingCache()
        ordering = ordering_cache.get(pattern_key(matrix), matrix)
    return lu_factor(matrix, ordering)


def direct_solve(system, factors=None):
    """
    Solve the bordered system in one sparse LU solve.

    :param system: ArrowheadSystem
    :param factors: LuFactors from :func:`direct_factorize`, computed when None
    :return: Tuple (delta_lambda_s, list of delta_omega_t)
    """
    if factors is None:
        factors = direct_factorize(system)
    solution = lu_solve(factors, system.rhs())
    omega, start = [], 0
    for size in system.block_sizes:
        omega.append(solution[start:start + size])
        start += size
    return solution[start:], omega


# =============================================================================
# Backends used by the solver
# =============================================================================


class SchurBackend:
    name = "schur"

    def __init__(self, problem):
        self.problem = problem
        self.static = problem.stationary
        self.pattern = predict_schur_nnz(
            problem.case.avbp, problem.case.conch, problem.case.condi, problem.link
        )
        self.orderings = OrderingCache()
        self.two_by_two_limit = logic.get_setting_value("ldl_two_by_two_limit")
        self.peak_nnz = 0
        self.last = None

    def solve(self, system):
        cache = schur_factorize(
            system, self.static, self.pattern, self.orderings, self.two_by_two_limit
        )
        self.last = cache
        self.peak_nnz = max(self.peak_nnz, cache.ledger["peak"])
        return schur_solve(cache, system)


class DirectBackend:
    name = "direct-lu"

    def __init__(self, problem):
        self.problem = problem
        self.ordering = logic.get_setting_value("direct_ordering")
        self.orderings = OrderingCache()
        self.peak_nnz = 0
        self.last = None

    def solve(self, system):
        factors = direct_factorize(system, self.ordering, self.orderings)
        self.last = factors
        self.peak_nnz = max(self.peak_nnz, factors.nnz)
        return direct_solve(system, factors)


def make_backend(name, problem):
    """
    Instantiate a KKT backend by name.

    :param name: "schur" or "direct-lu"
    :param problem: Problem
    """
    if name == "schur":
        return SchurBackend(problem)
    if name == "direct-lu":
        return DirectBackend(problem)
    raise ValueError(f"Unknown KKT backend: {name}")
