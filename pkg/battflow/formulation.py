"""
Multi-period OPF problem: variable and constraint layouts, bounds, storage
coupling and the evaluation of objective, equalities and inequalities.

Per time step the variables are ``x_t = [Va, Vm, Pg, Qg, SOC, Pch, Pdch, Qs]``
and ``X`` stacks them over t. Equalities are stacked as all power balances, then
all pinned-variable rows, then all storage rows; inequalities as all line limits,
then all box rows.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

from dataclasses import dataclass

import numpy as np

from battflow import case_io as ci
from battflow.exceptions import CaseValidationError, LayoutError
from battflow.logger import get_logger
from battflow.network import (
    build_admittances,
    build_connectivity3d,
    bus_injections,
    line_flows,
)

logger = get_logger(__name__)

GROUPS = ("va", "vm", "pg", "qg", "soc", "pch", "pdch", "qs")


# =============================================================================
# Layouts
# =============================================================================


@dataclass(frozen=True)
class VarLayout:
    """Offsets of the eight variable groups inside each x_t."""

    n_bus: int
    n_gen: int
    n_storage: int
    T: int

    @property
    def sizes(self):
        nb, ng, ny = self.n_bus, self.n_gen, self.n_storage
        return dict(zip(GROUPS, (nb, nb, ng, ng, ny, ny, ny, ny)))

    @property
    def offsets(self):
        offsets, start = {}, 0
        for group, size in self.sizes.items():
            offsets[group] = start
            start += size
        return offsets

    @property
    def n_xt(self):
        return 2 * self.n_bus + 2 * self.n_gen + 4 * self.n_storage

    @property
    def n_x(self):
        return self.T * self.n_xt

    def local(self, group):
        """Slice of ``group`` inside x_t."""
        start = self.offsets[group]
        return slice(start, start + self.sizes[group])

    def block(self, t):
        """Slice of x_t inside X."""
        return slice(t * self.n_xt, (t + 1) * self.n_xt)

    def index(self, group, t):
        """Global indices of ``group`` at step t."""
        start = t * self.n_xt + self.offsets[group]
        return np.arange(start, start + self.sizes[group])

    def group_of(self, local_index):
        for group in GROUPS:
            part = self.local(group)
            if part.start <= local_index < part.stop:
                return group, local_index - part.start
        raise LayoutError(f"Local index {local_index} outside x_t")


@dataclass(frozen=True, eq=False)
class ConLayout:
    """Constraint counts per step and their global row offsets."""

    T: int
    n_gn: int
    n_gs: int
    n_hn: int
    n_gl: np.ndarray
    n_hl: np.ndarray
    pinned: list
    pinned_values: list
    upper: list
    lower: list

    @property
    def N_gn(self):
        return self.T * self.n_gn

    @property
    def N_gl(self):
        return int(np.sum(self.n_gl))

    @property
    def N_gs(self):
        return self.T * self.n_gs

    @property
    def N_g(self):
        return self.N_gn + self.N_gl + self.N_gs

    @property
    def N_hn(self):
        return self.T * self.n_hn

    @property
    def N_hl(self):
        return int(np.sum(self.n_hl))

    @property
    def N_h(self):
        return self.N_hn + self.N_hl

    def gn_rows(self, t):
        return np.arange(t * self.n_gn, (t + 1) * self.n_gn)

    def gl_rows(self, t):
        start = self.N_gn + int(np.sum(self.n_gl[:t]))
        return np.arange(start, start + int(self.n_gl[t]))

    def gs_rows(self, t):
        start = self.N_gn + self.N_gl + t * self.n_gs
        return np.arange(start, start + self.n_gs)

    def hn_rows(self, t):
        return np.arange(t * self.n_hn, (t + 1) * self.n_hn)

    def hl_rows(self, t):
        start = self.N_hn + int(np.sum(self.n_hl[:t]))
        return np.arange(start, start + int(self.n_hl[t]))


@dataclass(frozen=True, eq=False)
class GenCost:
    """Quadratic cost coefficients in $/MW^2h, $/MWh and $/h."""

    c2: np.ndarray
    c1: np.ndarray
    c0: np.ndarray
    reactive: bool


@dataclass(frozen=True, eq=False)
class Problem:
    case: object
    adm: object
    conn: object
    vars: VarLayout
    cons: ConLayout
    xmin: np.ndarray
    xmax: np.ndarray
    cost: GenCost
    limited: np.ndarray
    smax2: np.ndarray
    emax: np.ndarray
    eff_ch: np.ndarray
    eff_dch: np.ndarray
    link: np.ndarray
    soci: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    gen_on: np.ndarray
    price: np.ndarray
    dt: float
    stationary: bool


# =============================================================================
# Assembly
# =============================================================================


def _parse_costs(case):
    n_g = case.n_gen
    rows = case.gencost
    coefficients = np.zeros((rows.shape[0], 3))
    for k, row in enumerate(rows):
        if int(row[ci.MODEL]) != ci.POLYNOMIAL:
            raise CaseValidationError(
                "only polynomial costs are supported", matrix="gencost", row=k, col=ci.MODEL
            )
        n = int(row[ci.NCOST])
        if not 1 <= n <= 3:
            raise CaseValidationError(
                "cost polynomial degree above 2", matrix="gencost", row=k, col=ci.NCOST
            )
        coefficients[k, 3 - n:] = row[ci.COST:ci.COST + n]
    return GenCost(
        c2=coefficients[:, 0],
        c1=coefficients[:, 1],
        c0=coefficients[:, 2],
        reactive=rows.shape[0] == 2 * n_g,
    )


def session_links(avbp):
    """
    Whether SOC_t is tied to SOC_{t-1}.

    False at t=0, and at the first absent step after a departure when the
    device arrives again later, so each session starts from SOCi.
    """
    avbp = np.asarray(avbp) == 1
    n_y, T = avbp.shape
    link = np.zeros((n_y, T), dtype=bool)
    if T > 1:
        link[:, 1:] = True
    for i in range(n_y):
        for t in range(1, T):
            if avbp[i, t - 1] and not avbp[i, t] and avbp[i, t + 1:].any():
                link[i, t] = False
    return link


def _bounds_at(case, layout, t, gen_on):
    base = case.base_mva
    n_xt = layout.n_xt
    lo = np.full(n_xt, -np.inf)
    hi = np.full(n_xt, np.inf)
    bus, gen, batt = case.bus, case.gen, case.batt

    lo[layout.local("vm")] = bus[:, ci.VMIN]
    hi[layout.local("vm")] = bus[:, ci.VMAX]

    g_av = gen_on & (case.avg[:, t] == 1)
    lo[layout.local("pg")] = np.where(g_av, gen[:, ci.PMIN] / base, 0.0)
    hi[layout.local("pg")] = np.where(g_av, gen[:, ci.PMAX] / base, 0.0)
    lo[layout.local("qg")] = np.where(g_av, gen[:, ci.QMIN] / base, 0.0)
    hi[layout.local("qg")] = np.where(g_av, gen[:, ci.QMAX] / base, 0.0)

    plugged = case.avbp[:, t] == 1
    soc_lo = np.where(
        plugged, np.maximum(batt[:, ci.SOC_MIN], case.socmi[:, t]), batt[:, ci.SOC_MIN] - 1.0
    )
    soc_hi = np.where(plugged, batt[:, ci.SOC_MAX], batt[:, ci.SOC_MAX] + 1.0)
    bad = np.flatnonzero(soc_lo > soc_hi)
    if bad.size:
        raise CaseValidationError(
            "minimum SOC above SOCmax", matrix="socmi", row=int(bad[0]), col=t
        )
    lo[layout.local("soc")] = soc_lo
    hi[layout.local("soc")] = soc_hi

    charge = plugged & (case.conch[:, t] == 1)
    discharge = plugged & (case.condi[:, t] == 1)
    reactive = plugged & (case.avbq[:, t] == 1)
    lo[layout.local("pch")] = 0.0
    hi[layout.local("pch")] = np.where(charge, batt[:, ci.PCH_MAX] / base, 0.0)
    lo[layout.local("pdch")] = 0.0
    hi[layout.local("pdch")] = np.where(discharge, batt[:, ci.PDCH_MAX] / base, 0.0)
    lo[layout.local("qs")] = np.where(reactive, batt[:, ci.QS_MIN] / base, 0.0)
    hi[layout.local("qs")] = np.where(reactive, batt[:, ci.QS_MAX] / base, 0.0)

    bad = np.flatnonzero(lo > hi)
    if bad.size:
        group, k = layout.group_of(int(bad[0]))
        raise CaseValidationError(f"inconsistent {group} bounds", matrix=group, row=k, col=t)
    return lo, hi


def build_problem(case):
    """
    Assemble the multi-period problem of a validated case.

    :param case: Case
    :return: Problem
    """
    adm = build_admittances(case)
    conn = build_connectivity3d(case)
    layout = VarLayout(case.n_bus, case.n_gen, case.n_storage, case.T)
    T, base = case.T, case.base_mva

    ref = np.flatnonzero(case.bus[:, ci.BUS_TYPE] == ci.REF)
    if ref.size == 0:
        raise CaseValidationError("no reference bus", matrix="bus", col=ci.BUS_TYPE)
    va_ref = np.radians(case.bus[ref, ci.VA])
    ref_local = layout.offsets["va"] + ref
    gen_on = case.gen[:, ci.GEN_STATUS] > 0

    xmin = np.empty(layout.n_x)
    xmax = np.empty(layout.n_x)
    pinned, pinned_values, upper, lower = [], [], [], []
    for t in range(T):
        lo, hi = _bounds_at(case, layout, t, gen_on)
        lo[ref_local] = va_ref
        hi[ref_local] = va_ref
        is_pinned = lo == hi
        is_pinned[ref_local] = False
        others = np.flatnonzero(is_pinned)
        is_pinned[ref_local] = True
        index = np.r_[ref_local, others].astype(int)
        pinned.append(index)
        pinned_values.append(lo[index].copy())
        upper.append(np.flatnonzero(~is_pinned & np.isfinite(hi)))
        lower.append(np.flatnonzero(~is_pinned & np.isfinite(lo)))
        xmin[layout.block(t)] = lo
        xmax[layout.block(t)] = hi

    rate = case.branch[adm.branches, ci.RATE_A]
    limited = np.flatnonzero(rate > 0)
    cons = ConLayout(
        T=T,
        n_gn=2 * case.n_bus,
        n_gs=case.n_storage,
        n_hn=2 * limited.size,
        n_gl=np.array([p.size for p in pinned], dtype=int),
        n_hl=np.array([u.size + l.size for u, l in zip(upper, lower)], dtype=int),
        pinned=pinned,
        pinned_values=pinned_values,
        upper=upper,
        lower=lower,
    )
    problem = Problem(
        case=case,
        adm=adm,
        conn=conn,
        vars=layout,
        cons=cons,
        xmin=xmin,
        xmax=xmax,
        cost=_parse_costs(case),
        limited=limited,
        smax2=(rate[limited] / base) ** 2,
        emax=case.batt[:, ci.E_MAX] / base,
        eff_ch=case.batt[:, ci.EFF_CH].copy(),
        eff_dch=case.batt[:, ci.EFF_DCH].copy(),
        link=session_links(case.avbp),
        soci=np.array(case.soci, dtype=float),
        pd=np.asarray(case.pd) / base,
        qd=np.asarray(case.qd) / base,
        gen_on=gen_on,
        price=np.asarray(case.price, dtype=float),
        dt=float(case.dt),
        stationary=case.is_stationary(),
    )
    logger.info(
        "Built problem %s: N_x=%s N_g=%s N_h=%s",
        case.name, layout.n_x, cons.N_g, cons.N_h,
    )
    return problem


# =============================================================================
# Evaluation
# =============================================================================


def split(problem, x):
    """View X as a T-by-N_xt array."""
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.vars.n_x,):
        raise LayoutError(f"X has shape {x.shape}, expected ({problem.vars.n_x},)")
    return x.reshape(problem.vars.T, problem.vars.n_xt)


def unpack(problem, x):
    """
    Split X into per-group arrays shaped (group size, T).

    :param problem: Problem
    :param x: Primal vector
    :return: Dict keyed by va, vm, pg, qg, soc, pch, pdch, qs
    """
    X = split(problem, x)
    return {group: X[:, problem.vars.local(group)].T.copy() for group in GROUPS}


def voltage(problem, xt):
    layout = problem.vars
    return xt[layout.local("vm")] * np.exp(1j * xt[layout.local("va")])


def balance_residual(problem, t, xt):
    """Active then reactive power balance rows at step t."""
    layout, conn = problem.vars, problem.conn
    s_bus = bus_injections(problem.adm, voltage(problem, xt))
    p_rows = (
        conn.cg[t] @ xt[layout.local("pg")]
        - problem.pd[:, t]
        - conn.cch[t] @ xt[layout.local("pch")]
        + conn.cdch[t] @ xt[layout.local("pdch")]
        - s_bus.real
    )
    q_rows = (
        conn.cg[t] @ xt[layout.local("qg")]
        - problem.qd[:, t]
        + conn.cs[t] @ xt[layout.local("qs")]
        - s_bus.imag
    )
    return np.r_[p_rows, q_rows]


def storage_residual(problem, t, xt, x_prev):
    """Energy balance of every device between t-1 and t."""
    layout = problem.vars
    soc = xt[layout.local("soc")]
    soc_prev = x_prev[layout.local("soc")] if x_prev is not None else np.zeros_like(soc)
    carried = np.where(problem.link[:, t], soc_prev, 0.0)
    return (
        problem.emax * (soc - carried)
        - problem.eff_ch * xt[layout.local("pch")] * problem.dt
        + xt[layout.local("pdch")] * problem.dt / problem.eff_dch
        - problem.emax * problem.soci[:, t]
    )


def eval_equalities(problem, x):
    """
    Equality residuals stacked as balances, pinned rows, storage rows.

    :param problem: Problem
    :param x: Primal vector
    :return: Array of length N_g
    """
    X = split(problem, x)
    cons = problem.cons
    g = np.empty(cons.N_g)
    for t in range(problem.vars.T):
        xt = X[t]
        g[cons.gn_rows(t)] = balance_residual(problem, t, xt)
        g[cons.gl_rows(t)] = xt[cons.pinned[t]] - cons.pinned_values[t]
        g[cons.gs_rows(t)] = storage_residual(problem, t, xt, X[t - 1] if t else None)
    return g


def eval_inequalities(problem, x):
    """
    Inequality residuals (feasible when <= 0) stacked as line limits, box rows.

    :param problem: Problem
    :param x: Primal vector
    :return: Array of length N_h
    """
    X = split(problem, x)
    cons = problem.cons
    layout = problem.vars
    h = np.empty(cons.N_h)
    lim = problem.limited
    for t in range(layout.T):
        xt = X[t]
        s_from, s_to = line_flows(problem.adm, voltage(problem, xt))
        h[cons.hn_rows(t)] = np.r_[
            np.abs(s_from[lim]) ** 2 - problem.smax2,
            np.abs(s_to[lim]) ** 2 - problem.smax2,
        ]
        block = layout.block(t)
        lo, hi = problem.xmin[block], problem.xmax[block]
        up, low = cons.upper[t], cons.lower[t]
        h[cons.hl_rows(t)] = np.r_[xt[up] - hi[up], lo[low] - xt[low]]
    return h


def _gate(problem):
    return (problem.case.avg == 1) & problem.gen_on[:, None]


def eval_objective(problem, x):
    """
    Generation cost over the horizon; storage carries no cost.

    :param problem: Problem
    :param x: Primal vector
    :return: Cost in $
    """
    parts = unpack(problem, x)
    cost, base, n_g = problem.cost, problem.case.base_mva, problem.vars.n_gen
    gate = _gate(problem)
    price = problem.price[None, :]
    pg = parts["pg"] * base
    total = np.sum(gate * (
        cost.c2[:n_g, None] * pg ** 2 + cost.c1[:n_g, None] * price * pg + cost.c0[:n_g, None]
    ))
    if cost.reactive:
        qg = parts["qg"] * base
        total += np.sum(gate * (
            cost.c2[n_g:, None] * qg ** 2 + cost.c1[n_g:, None] * price * qg + cost.c0[n_g:, None]
        ))
    return float(total)


def initial_point(problem, use_case_values=False):
    """
    Flat start at the midpoint of the bounds.

    Angles start at zero (the reference angle at its pinned value), unbounded
    voltage magnitudes at 1 and pinned variables at their pinned value.

    :param problem: Problem
    :param use_case_values: Start from the case's Vm, Va, Pg, Qg and BATT
        initial values instead, clipped into the bounds
    :return: X0
    """
    layout, cons, case = problem.vars, problem.cons, problem.case
    lo, hi = problem.xmin, problem.xmax
    both = np.isfinite(lo) & np.isfinite(hi)
    x0 = np.zeros(layout.n_x)
    x0[both] = 0.5 * (lo[both] + hi[both])
    only_lo = np.isfinite(lo) & ~np.isfinite(hi)
    only_hi = ~np.isfinite(lo) & np.isfinite(hi)
    x0[only_lo] = lo[only_lo] + 1.0
    x0[only_hi] = hi[only_hi] - 1.0

    X = x0.reshape(layout.T, layout.n_xt)
    for t in range(layout.T):
        vm_index = layout.index("vm", t)
        unbounded = ~np.isfinite(lo[vm_index]) & ~np.isfinite(hi[vm_index])
        x0[vm_index[unbounded]] = 1.0
        X[t, layout.local("va")] = 0.0
        if use_case_values:
            base = case.base_mva
            X[t, layout.local("vm")] = case.bus[:, ci.VM]
            X[t, layout.local("va")] = np.radians(case.bus[:, ci.VA])
            X[t, layout.local("pg")] = case.gen[:, ci.PG] / base
            X[t, layout.local("qg")] = case.gen[:, ci.QG] / base
            if case.n_storage:
                X[t, layout.local("soc")] = case.batt[:, ci.SOC_OPT]
                X[t, layout.local("pch")] = case.batt[:, ci.PCH_OPT] / base
                X[t, layout.local("pdch")] = case.batt[:, ci.PDCH_OPT] / base
                X[t, layout.local("qs")] = case.batt[:, ci.Q_INJ_OPT] / base
            block = layout.block(t)
            X[t] = np.clip(X[t], lo[block], hi[block])
        X[t, cons.pinned[t]] = cons.pinned_values[t]
    return X.reshape(-1)
