"""
Analytical first and second derivatives of the objective and constraints.

Complex power derivatives follow the polar-coordinate forms used by MATPOWER:
``dS/dVa``, ``dS/dVm`` for bus injections and branch flows, and the
lambda-weighted second derivatives of both. Linear blocks (generator and
storage incidences, pinned rows, storage rows, box rows) never change and are
assembled once per problem.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import weakref
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from battflow.exceptions import LayoutError, NetworkError
from battflow.formulation import (
    eval_equalities,
    eval_inequalities,
    eval_objective,
    split,
    voltage,
)
from battflow.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class DerivBundle:
    """Function values and first derivatives at one point."""

    f: float
    f_x: np.ndarray
    g: np.ndarray
    g_x: sp.csc_matrix
    h: np.ndarray
    h_x: sp.csc_matrix


@dataclass(frozen=True, eq=False)
class HessBundle:
    """Hessian of the Lagrangian, globally and as per-step diagonal blocks."""

    lxx: sp.csc_matrix
    blocks: list


def _diag(values):
    return sp.diags(values, format="csr")


def _ybus(adm):
    return sp.csr_matrix(getattr(adm, "ybus", adm))


def _check_magnitude(v):
    v = np.asarray(v, dtype=complex)
    if np.any(np.abs(v) == 0):
        raise NetworkError("Voltage magnitude is zero at a bus")
    return v


# =============================================================================
# Complex power derivatives
# =============================================================================


def jac_power_balance(adm, v):
    """
    Partial derivatives of bus injections with respect to angle and magnitude.

    :param adm: Admittances or a bus admittance matrix
    :param v: Complex bus voltages
    :return: Tuple (dS_dVa, dS_dVm) of complex sparse matrices
    """
    v = _check_magnitude(v)
    ybus = _ybus(adm)
    i_bus = ybus @ v
    diag_v = _diag(v)
    diag_i = _diag(i_bus)
    diag_vnorm = _diag(v / np.abs(v))
    ds_dvm = diag_v @ (ybus @ diag_vnorm).conj() + diag_i.conj() @ diag_vnorm
    ds_dva = 1j * diag_v @ (diag_i - ybus @ diag_v).conj()
    return sp.csr_matrix(ds_dva), sp.csr_matrix(ds_dvm)


def _branch_parts(adm, lines=None):
    if lines is None:
        lines = np.arange(adm.n_line)
    return (
        adm.f_bus[lines], adm.t_bus[lines],
        sp.csr_matrix(adm.yf)[lines], sp.csr_matrix(adm.yt)[lines],
    )


def _dsbr(ybr, ends, v):
    n_l, n_b = ybr.shape
    lines = np.arange(n_l)
    vnorm = v / np.abs(v)
    i_br = ybr @ v
    v_end = sp.csr_matrix((v[ends], (lines, ends)), shape=(n_l, n_b))
    vnorm_end = sp.csr_matrix((vnorm[ends], (lines, ends)), shape=(n_l, n_b))
    diag_vend = _diag(v[ends])
    diag_i = _diag(i_br)
    d_va = 1j * (diag_i.conj() @ v_end - diag_vend @ (ybr @ _diag(v)).conj())
    d_vm = diag_vend @ (ybr @ _diag(vnorm)).conj() + diag_i.conj() @ vnorm_end
    flows = v[ends] * np.conj(i_br)
    return sp.csr_matrix(d_va), sp.csr_matrix(d_vm), flows


def jac_line_flow(adm, v, lines=None):
    """
    Partial derivatives of the branch flows at both terminals.

    :param adm: Admittances
    :param v: Complex bus voltages
    :param lines: Optional subset of in-service line indices
    :return: Tuple (dSf_dVa, dSf_dVm, dSt_dVa, dSt_dVm, Sf, St)
    """
    v = _check_magnitude(v)
    f, t, yf, yt = _branch_parts(adm, lines)
    dsf_dva, dsf_dvm, s_from = _dsbr(yf, f, v)
    dst_dva, dst_dvm, s_to = _dsbr(yt, t, v)
    return dsf_dva, dsf_dvm, dst_dva, dst_dvm, s_from, s_to


def jac_squared_flow(ds_dva, ds_dvm, flows):
    """
    Derivatives of |S|^2 given the flow derivatives.

    :return: Tuple (dA_dVa, dA_dVm) of real sparse matrices
    """
    d_re = _diag(2.0 * flows.real)
    d_im = _diag(2.0 * flows.imag)
    return (
        sp.csr_matrix(d_re @ ds_dva.real + d_im @ ds_dva.imag),
        sp.csr_matrix(d_re @ ds_dvm.real + d_im @ ds_dvm.imag),
    )


def hess_power_balance(adm, v, lam):
    """
    Second derivatives of lam^T S_bus.

    :return: Tuple (Gaa, Gav, Gva, Gvv) of complex sparse matrices
    """
    v = _check_magnitude(v)
    ybus = _ybus(adm)
    n = v.size
    i_bus = ybus @ v
    diag_lam = _diag(lam)
    diag_v = _diag(v)
    A = _diag(lam * v)
    B = ybus @ diag_v
    C = A @ B.conj()
    D = ybus.conj().T @ diag_v
    E = diag_v.conj() @ (D @ diag_lam - _diag(D @ lam))
    F = C - A @ _diag(np.conj(i_bus))
    G = _diag(np.ones(n) / np.abs(v))
    g_aa = E + F
    g_va = 1j * G @ (E - F)
    g_av = g_va.T
    g_vv = G @ (C + C.T) @ G
    return g_aa, g_av, g_va, g_vv


def _hess_branch(cbr, ybr, v, lam):
    n_b = v.size
    diag_lam = _diag(lam)
    diag_v = _diag(v)
    A = ybr.conj().T @ diag_lam @ cbr
    B = diag_v.conj() @ A @ diag_v
    D = _diag((A @ v) * np.conj(v))
    E = _diag((A.T @ np.conj(v)) * v)
    F = B + B.T
    G = _diag(np.ones(n_b) / np.abs(v))
    h_aa = F - D - E
    h_va = 1j * G @ (B - B.T - D + E)
    h_av = h_va.T
    h_vv = G @ F @ G
    return h_aa, h_av, h_va, h_vv


def hess_squared_flow(ds_dva, ds_dvm, flows, cbr, ybr, v, mu):
    """
    Second derivatives of mu^T |S_br|^2.

    :return: Tuple (Haa, Hav, Hva, Hvv) of real sparse matrices
    """
    diag_mu = _diag(mu)
    s_aa, s_av, s_va, s_vv = _hess_branch(cbr, ybr, v, np.conj(flows) * mu)
    h_aa = 2 * (s_aa + ds_dva.T @ diag_mu @ ds_dva.conj()).real
    h_va = 2 * (s_va + ds_dvm.T @ diag_mu @ ds_dva.conj()).real
    h_av = 2 * (s_av + ds_dva.T @ diag_mu @ ds_dvm.conj()).real
    h_vv = 2 * (s_vv + ds_dvm.T @ diag_mu @ ds_dvm.conj()).real
    return h_aa, h_av, h_va, h_vv


# =============================================================================
# Problem-level assembly
# =============================================================================


class _Triplets:
    def __init__(self):
        self.rows, self.cols, self.vals = [], [], []

    def add(self, block, row_start, col_start):
        coo = sp.coo_matrix(block)
        self.rows.append(coo.row + row_start)
        self.cols.append(coo.col + col_start)
        self.vals.append(coo.data)

    def add_entries(self, rows, cols, vals):
        self.rows.append(np.asarray(rows))
        self.cols.append(np.asarray(cols))
        self.vals.append(np.asarray(vals, dtype=float))

    def build(self, shape):
        if not self.rows:
            return sp.csc_matrix(shape)
        matrix = sp.csc_matrix(
            (
                np.concatenate(self.vals),
                (np.concatenate(self.rows), np.concatenate(self.cols)),
            ),
            shape=shape,
        )
        matrix.sum_duplicates()
        matrix.sort_indices()
        return matrix


class DerivativeEvaluator:
    """
    Derivatives of one problem.

    The linear parts of G_X and H_X are built at construction; each call
    recomputes only the voltage-dependent blocks.
    """

    def __init__(self, problem):
        self.problem = problem
        self.n_lim = problem.limited.size
        adm = problem.adm
        self._cf = sp.csr_matrix(adm.cf)[problem.limited]
        self._ct = sp.csr_matrix(adm.ct)[problem.limited]
        self._f_bus, self._t_bus, self._yf, self._yt = _branch_parts(adm, problem.limited)
        self.g_linear = self._linear_equalities()
        self.h_linear = self._linear_inequalities()
        logger.debug(
            "Cached linear Jacobian blocks: %s + %s nonzeros",
            self.g_linear.nnz, self.h_linear.nnz,
        )

    def _linear_equalities(self):
        problem = self.problem
        layout, cons, conn = problem.vars, problem.cons, problem.conn
        nb, ny = layout.n_bus, layout.n_storage
        trip = _Triplets()
        for t in range(layout.T):
            col = t * layout.n_xt
            p_row, q_row = cons.gn_rows(t)[0], cons.gn_rows(t)[0] + nb
            trip.add(conn.cg[t], p_row, col + layout.offsets["pg"])
            trip.add(-conn.cch[t], p_row, col + layout.offsets["pch"])
            trip.add(conn.cdch[t], p_row, col + layout.offsets["pdch"])
            trip.add(conn.cg[t], q_row, col + layout.offsets["qg"])
            trip.add(conn.cs[t], q_row, col + layout.offsets["qs"])
            pinned = cons.pinned[t]
            trip.add_entries(cons.gl_rows(t), col + pinned, np.ones(pinned.size))
            if ny:
                rows = cons.gs_rows(t)
                devices = np.arange(ny)
                trip.add_entries(rows, col + layout.offsets["soc"] + devices, problem.emax)
                trip.add_entries(
                    rows, col + layout.offsets["pch"] + devices, -problem.eff_ch * problem.dt
                )
                trip.add_entries(
                    rows, col + layout.offsets["pdch"] + devices, problem.dt / problem.eff_dch
                )
                linked = np.flatnonzero(problem.link[:, t])
                if linked.size:
                    prev = (t - 1) * layout.n_xt + layout.offsets["soc"]
                    trip.add_entries(rows[linked], prev + linked, -problem.emax[linked])
        return trip.build((cons.N_g, layout.n_x))

    def _linear_inequalities(self):
        problem = self.problem
        layout, cons = problem.vars, problem.cons
        trip = _Triplets()
        for t in range(layout.T):
            col = t * layout.n_xt
            rows = cons.hl_rows(t)
            up, low = cons.upper[t], cons.lower[t]
            trip.add_entries(rows[:up.size], col + up, np.ones(up.size))
            trip.add_entries(rows[up.size:], col + low, -np.ones(low.size))
        return trip.build((cons.N_h, layout.n_x))

    # -------------------------------------------------------------------------

    def objective_gradient(self, x):
        problem = self.problem
        layout, cost = problem.vars, problem.cost
        X = split(problem, x)
        base, n_g = problem.case.base_mva, layout.n_gen
        gate = ((problem.case.avg == 1) & problem.gen_on[:, None]).T
        grad = np.zeros_like(X)
        pg = X[:, layout.local("pg")]
        grad[:, layout.local("pg")] = gate * (
            2.0 * cost.c2[:n_g] * base ** 2 * pg + cost.c1[:n_g] * base * problem.price[:, None]
        )
        if cost.reactive:
            qg = X[:, layout.local("qg")]
            grad[:, layout.local("qg")] = gate * (
                2.0 * cost.c2[n_g:] * base ** 2 * qg
                + cost.c1[n_g:] * base * problem.price[:, None]
            )
        return grad.reshape(-1)

    def jacobians(self, x):
        """
        Evaluate f, g, h and their first derivatives.

        :param x: Primal vector
        :return: DerivBundle
        """
        problem = self.problem
        layout, cons = problem.vars, problem.cons
        X = split(problem, x)
        nb = layout.n_bus
        g_trip, h_trip = _Triplets(), _Triplets()
        for t in range(layout.T):
            v = voltage(problem, X[t])
            col = t * layout.n_xt
            ds_dva, ds_dvm = jac_power_balance(problem.adm, v)
            row = cons.gn_rows(t)[0]
            g_trip.add(-ds_dva.real, row, col)
            g_trip.add(-ds_dvm.real, row, col + nb)
            g_trip.add(-ds_dva.imag, row + nb, col)
            g_trip.add(-ds_dvm.imag, row + nb, col + nb)
            if self.n_lim:
                dsf_dva, dsf_dvm, s_from = _dsbr(self._yf, self._f_bus, v)
                dst_dva, dst_dvm, s_to = _dsbr(self._yt, self._t_bus, v)
                daf_dva, daf_dvm = jac_squared_flow(dsf_dva, dsf_dvm, s_from)
                dat_dva, dat_dvm = jac_squared_flow(dst_dva, dst_dvm, s_to)
                row = cons.hn_rows(t)[0]
                h_trip.add(daf_dva, row, col)
                h_trip.add(daf_dvm, row, col + nb)
                h_trip.add(dat_dva, row + self.n_lim, col)
                h_trip.add(dat_dvm, row + self.n_lim, col + nb)
        g_x = sp.csc_matrix(g_trip.build((cons.N_g, layout.n_x)) + self.g_linear)
        h_x = sp.csc_matrix(h_trip.build((cons.N_h, layout.n_x)) + self.h_linear)
        g_x.sort_indices()
        h_x.sort_indices()
        return DerivBundle(
            f=eval_objective(problem, x),
            f_x=self.objective_gradient(x),
            g=eval_equalities(problem, x),
            g_x=g_x,
            h=eval_inequalities(problem, x),
            h_x=h_x,
        )

    def hessian(self, x, lam, mu, cost_mult=1.0):
        """
        Hessian of cost_mult * f + lam^T g + mu^T h.

        :param x: Primal vector
        :param lam: Equality multipliers
        :param mu: Inequality multipliers
        :param cost_mult: Factor on the objective part
        :return: HessBundle
        """
        problem = self.problem
        layout, cons, cost = problem.vars, problem.cons, problem.cost
        lam = np.asarray(lam, dtype=float)
        mu = np.asarray(mu, dtype=float)
        if lam.shape != (cons.N_g,) or mu.shape != (cons.N_h,):
            raise LayoutError("Multiplier lengths do not match the constraint layout")
        X = split(problem, x)
        nb, ng, n_xt = layout.n_bus, layout.n_gen, layout.n_xt
        base = problem.case.base_mva
        gate = (problem.case.avg == 1) & problem.gen_on[:, None]
        blocks = []
        for t in range(layout.T):
            v = voltage(problem, X[t])
            lam_t = lam[cons.gn_rows(t)]
            gp = hess_power_balance(problem.adm, v, lam_t[:nb])
            gq = hess_power_balance(problem.adm, v, lam_t[nb:])
            parts = [-(p.real + q.imag) for p, q in zip(gp, gq)]
            if self.n_lim:
                mu_t = mu[cons.hn_rows(t)]
                dsf_dva, dsf_dvm, s_from = _dsbr(self._yf, self._f_bus, v)
                dst_dva, dst_dvm, s_to = _dsbr(self._yt, self._t_bus, v)
                hf = hess_squared_flow(
                    dsf_dva, dsf_dvm, s_from, self._cf, self._yf, v, mu_t[:self.n_lim]
                )
                ht = hess_squared_flow(
                    dst_dva, dst_dvm, s_to, self._ct, self._yt, v, mu_t[self.n_lim:]
                )
                parts = [p + a + b for p, a, b in zip(parts, hf, ht)]
            h_aa, h_av, h_va, h_vv = parts
            voltage_block = sp.bmat([[h_aa, h_av], [h_va, h_vv]], format="coo")

            diag = np.zeros(n_xt)
            diag[layout.local("pg")] = gate[:, t] * 2.0 * cost.c2[:ng] * base ** 2
            if cost.reactive:
                diag[layout.local("qg")] = gate[:, t] * 2.0 * cost.c2[ng:] * base ** 2
            diag *= cost_mult

            trip = _Triplets()
            trip.add(voltage_block, 0, 0)
            nz = np.flatnonzero(diag)
            trip.add_entries(nz, nz, diag[nz])
            blocks.append(trip.build((n_xt, n_xt)))
        lxx = sp.block_diag(blocks, format="csc") if blocks else sp.csc_matrix((0, 0))
        lxx.sort_indices()
        return HessBundle(lxx=lxx, blocks=blocks)


_EVALUATORS = weakref.WeakKeyDictionary()


def evaluator_for(problem):
    """Return the cached DerivativeEvaluator of ``problem``."""
    evaluator = _EVALUATORS.get(problem)
    if evaluator is None:
        evaluator = DerivativeEvaluator(problem)
        _EVALUATORS[problem] = evaluator
    return evaluator


def jac_all(problem, x):
    """
    First derivatives of objective, equalities and inequalities.

    :param problem: Problem
    :param x: Primal vector
    :return: DerivBundle
    """
    return evaluator_for(problem).jacobians(x)


def hess_lagrangian(problem, x, lam, mu, cost_mult=1.0):
    """
    Hessian of the Lagrangian.

    :param problem: Problem
    :param x: Primal vector
    :param lam: Equality multipliers
    :param mu: Inequality multipliers
    :param cost_mult: Factor on the objective part
    :return: HessBundle
    """
    return evaluator_for(problem).hessian(x, lam, mu, cost_mult)


def lagrangian_gradient(problem, x, lam, mu, cost_mult=1.0):
    """Gradient of cost_mult * f + lam^T g + mu^T h."""
    bundle = jac_all(problem, x)
    return cost_mult * bundle.f_x + bundle.g_x.T @ lam + bundle.h_x.T @ mu


# =============================================================================
# Finite differences
# =============================================================================


def fd_oracle(fun, x, h=None):
    """
    Central finite-difference Jacobian.

    :param fun: Callable mapping a vector to a scalar or vector
    :param x: Point of evaluation
    :param h: Step; defaults to 1e-6 * max(1, |x_i|) per component
    :return: Dense array of shape (len(fun(x)), len(x))
    """
    x = np.asarray(x, dtype=float)
    if h is None:
        steps = 1e-6 * np.maximum(1.0, np.abs(x))
    else:
        if h <= 0:
            raise ValueError("Finite-difference step must be positive")
        steps = np.full(x.size, float(h))
    m = np.size(fun(x))
    jac = np.empty((m, x.size))
    for i in range(x.size):
        forward = x.copy()
        backward = x.copy()
        forward[i] += steps[i]
        backward[i] -= steps[i]
        jac[:, i] = (
            np.ravel(fun(forward)) - np.ravel(fun(backward))
        ) / (2.0 * steps[i])
    return jac
