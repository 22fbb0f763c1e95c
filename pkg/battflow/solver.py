"""
Primal-dual interior point method.

The loop follows the MATPOWER Interior Point Solver conventions: slack
variables Z for the inequalities, a log barrier with parameter gamma, a single
Newton step per iteration on the reduced system

    [ M    G_X^T ] [dX]   [-N]
    [ G_X  0     ] [dL] = [-G]

with M = L_XX + H_X^T diag(mu / Z) H_X and N = L_X + H_X^T Z^-1 (gamma + mu H),
followed by recovery of dZ and dmu and fraction-to-boundary step lengths.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from battflow import logic
from battflow.derivatives import hess_lagrangian, jac_all
from battflow.exceptions import (
    MaxIterError,
    SingularMatrixError,
    StepCollapseError,
)
from battflow.formulation import initial_point
from battflow.kkt import BACKENDS, make_backend, reorder_arrowhead
from battflow.logger import get_logger

logger = get_logger(__name__)

MIN_STEP = 1e-12
REGULARIZATION = 1e-10


@dataclass
class SolverOptions:
    tol_feas: float = 1e-8
    tol_grad: float = 1e-8
    tol_comp: float = 1e-8
    tol_cost: float = 1e-8
    max_iter: int = 150
    sigma: float = 0.1
    xi_ftb: float = 0.99995
    backend: str = "schur"
    cost_scale: float = None

    def __post_init__(self):
        if not 0.0 < self.sigma < 1.0:
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")
        if not 0.0 < self.xi_ftb < 1.0:
            raise ValueError(f"xi_ftb must lie in (0, 1), got {self.xi_ftb}")
        if self.max_iter < 0:
            raise ValueError("max_iter must be non-negative")
        if self.backend not in BACKENDS:
            raise ValueError(f"Unknown KKT backend: {self.backend}")
        if self.cost_scale is None:
            self.cost_scale = logic.get_setting_value("cost_scale")
        if self.cost_scale <= 0:
            raise ValueError("cost_scale must be positive")


@dataclass
class IterState:
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    gamma: float
    iteration: int = 0
    alpha_p: float = 0.0
    alpha_d: float = 0.0


@dataclass(frozen=True, eq=False)
class StepRecord:
    """Everything one Newton step used and produced."""

    iteration: int
    state: IterState
    system: object
    m: sp.csc_matrix
    n: np.ndarray
    derivs: object
    lxx: sp.csc_matrix
    dx: np.ndarray
    dlam: np.ndarray
    dz: np.ndarray
    dmu: np.ndarray
    alpha_p: float
    alpha_d: float
    timing: dict


@dataclass(eq=False)
class Solution:
    x: np.ndarray
    objective: float
    lam: np.ndarray
    mu: np.ndarray
    z: np.ndarray
    iterations: int
    converged: bool
    residuals: dict
    timing: dict
    peak_nnz: int
    backend: str
    history: list = field(default_factory=list)
    orderings_computed: int = 0


# =============================================================================
# Newton step pieces
# =============================================================================


def newton_system(problem, state, derivs, hess):
    """
    Blocks of M and the vector N of the reduced Newton system.

    :param problem: Problem
    :param state: IterState
    :param derivs: DerivBundle at state.x (objective already scaled)
    :param hess: HessBundle at state
    :return: Tuple (list of M_t, N, G_X, G)
    """
    layout, cons = problem.vars, problem.cons
    h_x = sp.csr_matrix(derivs.h_x)
    weight = state.mu / state.z
    m_blocks = []
    for t in range(layout.T):
        rows = np.r_[cons.hn_rows(t), cons.hl_rows(t)]
        h_t = h_x[rows][:, layout.block(t)]
        m_t = hess.blocks[t] + h_t.T @ sp.diags(weight[rows]) @ h_t
        m_blocks.append(sp.csc_matrix(m_t))
    lx = derivs.f_x + derivs.g_x.T @ state.lam + derivs.h_x.T @ state.mu
    n = lx + derivs.h_x.T @ ((state.gamma + state.mu * derivs.h) / state.z)
    return m_blocks, n, derivs.g_x, derivs.g


def recover_step(state, dx, h, h_x):
    """
    Slack and inequality multiplier steps from the primal step.

    :return: Tuple (dz, dmu)
    """
    dz = -h - state.z - h_x @ dx
    dmu = -state.mu + (state.gamma - state.mu * dz) / state.z
    return dz, dmu


def step_lengths(z, mu, dz, dmu, xi):
    """
    Fraction-to-boundary step lengths.

    :return: Tuple (alpha_p, alpha_d)
    """
    alpha_p = 1.0
    shrinking = dz < 0
    if np.any(shrinking):
        alpha_p = min(xi * np.min(-z[shrinking] / dz[shrinking]), 1.0)
    alpha_d = 1.0
    shrinking = dmu < 0
    if np.any(shrinking):
        alpha_d = min(xi * np.min(-mu[shrinking] / dmu[shrinking]), 1.0)
    return alpha_p, alpha_d


def update_barrier(z, mu, sigma):
    """Centered barrier parameter sigma * z^T mu / N_h."""
    if z.size == 0:
        return 0.0
    return float(sigma * np.dot(z, mu) / z.size)


def kkt_residuals(x, z, lam, mu, f, f0, g, h, lx):
    """
    Scaled feasibility, gradient, complementarity and cost conditions.

    ``compcond`` is the average complementarity z^T mu / N_h that terminates
    the loop; ``compcond_x`` is z^T mu / (1 + ||x||_inf), reported alongside.
    """
    inf = np.inf
    norm_x = np.linalg.norm(x, inf) if x.size else 0.0
    norm_z = np.linalg.norm(z, inf) if z.size else 0.0
    norm_lam = np.linalg.norm(lam, inf) if lam.size else 0.0
    norm_mu = np.linalg.norm(mu, inf) if mu.size else 0.0
    max_h = np.max(h) if h.size else -inf
    norm_g = np.linalg.norm(g, inf) if g.size else 0.0
    gap = float(np.dot(z, mu)) if z.size else 0.0
    return {
        "feascond": max(norm_g, max_h) / (1.0 + max(norm_x, norm_z)),
        "gradcond": np.linalg.norm(lx, inf) / (1.0 + max(norm_lam, norm_mu)),
        "compcond": gap / z.size if z.size else 0.0,
        "compcond_x": gap / (1.0 + norm_x),
        "costcond": abs(f - f0) / (1.0 + abs(f0)),
    }


def newton_residual(record):
    """
    Normwise backward error of a recorded step in the unreduced Newton system.

    The system couples (dx, dz, dlam, dmu) through the Hessian of the
    Lagrangian, both constraint Jacobians, the complementarity rows
    ``mu * dz + z * dmu = gamma - z * mu`` and the slack rows
    ``h_x dx + dz = -(h + z)``. The value is
    ``||K d - r||_inf / (||K||_inf ||d||_inf + ||r||_inf)``.

    :param record: StepRecord
    :return: float
    """
    state, derivs = record.state, record.derivs
    n_h = state.z.size
    h_x = sp.csc_matrix(derivs.h_x)
    g_x = sp.csc_matrix(derivs.g_x)
    kkt = sp.bmat(
        [
            [record.lxx, None, g_x.T, h_x.T],
            [None, sp.diags(state.mu), None, sp.diags(state.z)],
            [g_x, None, None, None],
            [h_x, sp.identity(n_h), None, None],
        ],
        format="csr",
    )
    lx = derivs.f_x + g_x.T @ state.lam + h_x.T @ state.mu
    rhs = -np.r_[lx, state.z * state.mu - state.gamma, derivs.g, derivs.h + state.z]
    step = np.r_[record.dx, record.dz, record.dlam, record.dmu]
    residual = kkt @ step - rhs
    norm_k = spla.norm(kkt, np.inf)
    scale = norm_k * np.abs(step).max(initial=0.0) + np.abs(rhs).max(initial=0.0)
    return float(np.abs(residual).max(initial=0.0) / scale) if scale else 0.0


def _converged(residuals, options):
    return (
        residuals["feascond"] < options.tol_feas
        and residuals["gradcond"] < options.tol_grad
        and residuals["compcond"] < options.tol_comp
        and residuals["costcond"] < options.tol_cost
    )


def _regularized(blocks):
    return [
        sp.csc_matrix(block + REGULARIZATION * sp.identity(block.shape[0], format="csc"))
        for block in blocks
    ]


# =============================================================================
# Main loop
# =============================================================================


def solve(problem, options=None, callback=None, x0=None):
    """
    Solve a multi-period OPF problem.

    :param problem: Problem
    :param options: SolverOptions
    :param callback: Called with a StepRecord after every Newton step
    :param x0: Optional starting point, the flat start when None
    :return: Solution
    :raises MaxIterError: iteration limit reached
    :raises StepCollapseError: step length vanished or iterate non-finite
    :raises SingularMatrixError: KKT system singular after regularization
    """
    options = options or SolverOptions()
    backend = make_backend(options.backend, problem)
    scale = options.cost_scale
    started = time.perf_counter()
    timing = {"feval": 0.0, "kkt": 0.0, "step": 0.0}

    x = initial_point(problem) if x0 is None else np.array(x0, dtype=float)
    tic = time.perf_counter()
    derivs = _scaled(jac_all(problem, x), scale)
    timing["feval"] += time.perf_counter() - tic

    n_h, n_g = problem.cons.N_h, problem.cons.N_g
    gamma = 1.0
    z = np.maximum(1.0, -derivs.h)
    mu = gamma / z
    lam = np.zeros(n_g)
    state = IterState(x=x, z=z, lam=lam, mu=mu, gamma=gamma)

    f0 = derivs.f
    lx = derivs.f_x + derivs.g_x.T @ lam + derivs.h_x.T @ mu
    residuals = kkt_residuals(x, z, lam, mu, derivs.f, f0, derivs.g, derivs.h, lx)
    history = []
    converged = _converged(residuals, options)

    while not converged and state.iteration < options.max_iter:
        state.iteration += 1
        iteration_timing = {}

        tic = time.perf_counter()
        hess = hess_lagrangian(problem, state.x, state.lam, state.mu, scale)
        iteration_timing["feval"] = time.perf_counter() - tic

        tic = time.perf_counter()
        m_blocks, n, g_x, g = newton_system(problem, state, derivs, hess)
        system = reorder_arrowhead(problem, m_blocks, g_x, n, g)
        try:
            delta_lambda, omega = backend.solve(system)
        except SingularMatrixError:
            logger.warning(
                "KKT system singular at iteration %s, retrying with %.0e regularization",
                state.iteration, REGULARIZATION,
            )
            m_blocks = _regularized(m_blocks)
            system = reorder_arrowhead(problem, m_blocks, g_x, n, g)
            delta_lambda, omega = backend.solve(system)
        step = system.to_original(omega, delta_lambda)
        iteration_timing["kkt"] = time.perf_counter() - tic

        tic = time.perf_counter()
        n_x = problem.vars.n_x
        dx, dlam = step[:n_x], step[n_x:]
        dz, dmu = recover_step(state, dx, derivs.h, derivs.h_x)
        alpha_p, alpha_d = step_lengths(state.z, state.mu, dz, dmu, options.xi_ftb)
        finite = all(np.all(np.isfinite(v)) for v in (dx, dlam, dz, dmu))
        if not finite or alpha_p < MIN_STEP or alpha_d < MIN_STEP:
            partial = _solution(problem, state, derivs, residuals, timing, backend,
                                history, False, scale, started)
            raise StepCollapseError(
                f"Step collapsed at iteration {state.iteration} "
                f"(alpha_p={alpha_p:.3e}, alpha_d={alpha_d:.3e})",
                solution=partial,
            )

        if callback is not None:
            record_state = IterState(
                x=state.x.copy(), z=state.z.copy(), lam=state.lam.copy(),
                mu=state.mu.copy(), gamma=state.gamma, iteration=state.iteration,
            )
            callback(StepRecord(
                iteration=state.iteration,
                state=record_state,
                system=system,
                m=sp.block_diag(m_blocks, format="csc"),
                n=n,
                derivs=derivs,
                lxx=hess.lxx,
                dx=dx, dlam=dlam, dz=dz, dmu=dmu,
                alpha_p=alpha_p, alpha_d=alpha_d,
                timing=dict(iteration_timing),
            ))

        state.x = state.x + alpha_p * dx
        state.z = state.z + alpha_p * dz
        state.lam = state.lam + alpha_d * dlam
        state.mu = state.mu + alpha_d * dmu
        state.alpha_p, state.alpha_d = alpha_p, alpha_d
        if n_h:
            state.gamma = update_barrier(state.z, state.mu, options.sigma)
        iteration_timing["step"] = time.perf_counter() - tic

        tic = time.perf_counter()
        f_prev = derivs.f
        derivs = _scaled(jac_all(problem, state.x), scale)
        iteration_timing["feval"] += time.perf_counter() - tic

        if not np.all(np.isfinite(state.x)) or not np.isfinite(derivs.f):
            partial = _solution(problem, state, derivs, residuals, timing, backend,
                                history, False, scale, started)
            raise StepCollapseError(
                f"Non-finite iterate at iteration {state.iteration}", solution=partial
            )

        lx = derivs.f_x + derivs.g_x.T @ state.lam + derivs.h_x.T @ state.mu
        residuals = kkt_residuals(
            state.x, state.z, state.lam, state.mu, derivs.f, f_prev, derivs.g, derivs.h, lx
        )
        for key, value in iteration_timing.items():
            timing[key] += value
        history.append({
            "iteration": state.iteration,
            "gamma": state.gamma,
            "alpha_p": alpha_p,
            "alpha_d": alpha_d,
            "objective": derivs.f / scale,
            **residuals,
            **{f"{key}_seconds": value for key, value in iteration_timing.items()},
        })
        logger.debug(
            "it %3d  feas %.2e  grad %.2e  comp %.2e  cost %.2e  gamma %.2e  ap %.3f  ad %.3f",
            state.iteration, residuals["feascond"], residuals["gradcond"],
            residuals["compcond"], residuals["costcond"], state.gamma, alpha_p, alpha_d,
        )
        converged = _converged(residuals, options)

    solution = _solution(problem, state, derivs, residuals, timing, backend,
                         history, converged, scale, started)
    if not converged:
        raise MaxIterError(
            f"No convergence within {options.max_iter} iterations", solution=solution
        )
    logger.info(
        "Converged in %s iterations, objective %.6f, backend %s",
        solution.iterations, solution.objective, backend.name,
    )
    return solution


@dataclass(frozen=True, eq=False)
class _Scaled:
    f: float
    f_x: np.ndarray
    g: np.ndarray
    g_x: sp.csc_matrix
    h: np.ndarray
    h_x: sp.csc_matrix


def _scaled(bundle, scale):
    return _Scaled(
        f=bundle.f * scale,
        f_x=bundle.f_x * scale,
        g=bundle.g,
        g_x=bundle.g_x,
        h=bundle.h,
        h_x=bundle.h_x,
    )


def _solution(problem, state, derivs, residuals, timing, backend, history,
              converged, scale, started):
    total = dict(timing)
    total["total"] = time.perf_counter() - started
    orderings = getattr(getattr(backend, "orderings", None), "computed", 0)
    return Solution(
        x=state.x.copy(),
        objective=float(derivs.f / scale),
        lam=state.lam / scale,
        mu=state.mu / scale,
        z=state.z.copy(),
        iterations=state.iteration,
        converged=bool(converged),
        residuals={key: float(value) for key, value in residuals.items()},
        timing=total,
        peak_nnz=int(backend.peak_nnz),
        backend=backend.name,
        history=history,
        orderings_computed=int(orderings),
    )
