"""
Benchmark sweeps over (case, T, n_y, backend, strategy, repeat).

Each sweep cell builds a scenario, solves it and records iteration counts,
KKT and function-evaluation times and the peak live factor nnz. Results are
written as CSV through pandas; plots are produced by battflow.plots.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import dataclasses
import itertools
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from battflow import case_io, logic
from battflow.derivatives import fd_oracle, jac_all
from battflow.exceptions import BattflowError, ConvergenceError
from battflow.formulation import (
    build_problem,
    eval_equalities,
    eval_inequalities,
    eval_objective,
    initial_point,
)
from battflow.kkt import BACKENDS
from battflow.logger import get_logger
from battflow.solver import SolverOptions, solve

logger = get_logger(__name__)

SORT_KEYS = ["case", "T", "n_y", "backend", "strategy", "repeat"]
RESULTS_FILE = "results.csv"
MEMORY_FILE = "memory.csv"
CROSSOVER_FILE = "crossover.csv"
DERIVATIVES_FILE = "derivatives.csv"
STRATEGIES_FILE = "strategies.csv"

_SYNTHETIC = re.compile(r"^synthetic(\d+)$")


# =============================================================================
# Configuration and records
# =============================================================================


@dataclass
class BenchConfig:
    """
    One benchmark sweep.

    ``cases`` holds case file paths, bundled case names or ``synthetic<N>``
    names; the remaining lists span the sweep grid.
    """

    cases: list
    T: list
    n_y: list
    backends: list = field(default_factory=lambda: list(BACKENDS))
    strategies: list = field(default_factory=lambda: ["first-last"])
    repeats: int = 1
    seed: int = 0
    out: str = "bench-out"
    dt: float = 1.0
    max_iter: int = 150
    storage: dict = field(default_factory=logic.storage_defaults)
    fd_check: bool = False
    parallel_cells: int = 1

    def __post_init__(self):
        for name in ("cases", "T", "n_y", "backends", "strategies"):
            if not getattr(self, name):
                raise ValueError(f"Sweep list '{name}' must not be empty")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if any(int(T) < 1 for T in self.T):
            raise ValueError("Every T must be positive")
        if any(int(n) < 0 for n in self.n_y):
            raise ValueError("Every n_y must be non-negative")
        for backend in self.backends:
            if backend not in BACKENDS:
                raise ValueError(f"Unknown KKT backend: {backend}")
        for strategy in self.strategies:
            if strategy not in case_io.STRATEGIES:
                raise ValueError(f"Unknown distribution strategy: {strategy}")
        if self.parallel_cells < 1:
            raise ValueError("parallel_cells must be at least 1")

    def cells(self):
        """Sweep cells in CSV order."""
        grid = itertools.product(
            self.cases, sorted(set(int(T) for T in self.T)),
            sorted(set(int(n) for n in self.n_y)), sorted(self.backends),
            sorted(self.strategies), range(self.repeats),
        )
        return list(grid)


@dataclass(frozen=True)
class BenchRecord:
    case: str
    T: int
    n_y: int
    backend: str
    strategy: str
    repeat: int
    iterations: int
    kkt_seconds: float
    seconds_per_iteration: float
    feval_seconds: float
    peak_nnz: int
    converged: bool
    objective: float
    error: str = ""


COLUMNS = [f.name for f in dataclasses.fields(BenchRecord)]


# =============================================================================
# Sweep cells
# =============================================================================


def resolve_case(spec, seed=0):
    """
    Load the case behind a sweep entry.

    :param spec: File path, bundled case name or ``synthetic<N>``
    :param seed: Seed of synthetic cases
    :return: Case
    :raises FileNotFoundError: nothing matches ``spec``
    """
    if os.path.isfile(spec):
        return case_io.load_case(spec)
    match = _SYNTHETIC.match(spec)
    if match:
        return case_io.synthetic_case(int(match.group(1)), seed=seed)
    name = case_label(spec)
    bundled = os.path.join(case_io.DATA_DIR, f"{name}.battcase.json")
    if os.path.isfile(bundled):
        return case_io.load_bundled_case(name)
    raise FileNotFoundError(f"case not found: {spec}")


def case_label(spec):
    """Short case id used in CSV rows."""
    base = os.path.basename(spec)
    for suffix in (".battcase.json", ".json"):
        if base.endswith(suffix):
            return base[: -len(suffix)]
    return base


def scenario_for(case, T, n_y, strategy, dt, storage):
    """Case over T steps with n_y stationary devices."""
    scenario = case_io.with_horizon(case, T, dt)
    if n_y:
        buses = case_io.distribute_storage(scenario, n_y, strategy)
        scenario = case_io.attach_storage(scenario, buses, **storage)
    return scenario


def run_cell(case, label, T, n_y, backend, strategy, repeat, config):
    """
    Solve one sweep cell.

    Convergence failures are recorded with ``converged=False`` from the
    partial solution the solver attaches to the error. Any other battflow
    error, a singular KKT system for example, gives a row with
    ``converged=False``, NaN timings and the error class in ``error``.

    :return: BenchRecord
    """
    scenario = scenario_for(case, T, n_y, strategy, config.dt, config.storage)
    problem = build_problem(scenario)
    options = SolverOptions(backend=backend, max_iter=config.max_iter)
    cell = dict(
        case=label,
        T=int(T),
        n_y=int(n_y),
        backend=backend,
        strategy=strategy,
        repeat=int(repeat),
    )
    error = ""
    try:
        solution = solve(problem, options)
    except ConvergenceError as err:
        logger.warning(
            "Cell %s T=%s n_y=%s %s %s did not converge: %s",
            label, T, n_y, backend, strategy, err,
        )
        solution = err.solution
        error = type(err).__name__
    except BattflowError as err:
        logger.error(
            "Cell %s T=%s n_y=%s %s %s failed: %s",
            label, T, n_y, backend, strategy, err,
        )
        return BenchRecord(
            **cell,
            iterations=0,
            kkt_seconds=np.nan,
            seconds_per_iteration=np.nan,
            feval_seconds=np.nan,
            peak_nnz=0,
            converged=False,
            objective=np.nan,
            error=type(err).__name__,
        )
    iterations = int(solution.iterations)
    kkt = float(solution.timing["kkt"])
    return BenchRecord(
        **cell,
        iterations=iterations,
        kkt_seconds=kkt,
        seconds_per_iteration=kkt / iterations if iterations else 0.0,
        feval_seconds=float(solution.timing["feval"]),
        peak_nnz=int(solution.peak_nnz),
        converged=bool(solution.converged),
        objective=float(solution.objective),
        error=error,
    )


def _run_packed(args):
    return run_cell(*args)


def records_frame(records):
    """Schema-stable, sorted DataFrame of BenchRecords."""
    frame = pd.DataFrame([dataclasses.asdict(r) for r in records], columns=COLUMNS)
    return frame.sort_values(SORT_KEYS, kind="mergesort").reset_index(drop=True)


def run_bench(config):
    """
    Run every cell of a sweep.

    Cells run sequentially unless ``parallel_cells`` > 1, in which case whole
    cells are distributed over worker processes.

    :param config: BenchConfig
    :return: DataFrame with one row per cell
    """
    threads = logic.get_setting_value("threads")
    if threads != 1:
        logger.warning("Benchmark running with %s threads, timings are not comparable", threads)

    cases = {spec: resolve_case(spec, config.seed) for spec in config.cases}
    jobs = [
        (cases[spec], case_label(spec), T, n_y, backend, strategy, repeat, config)
        for spec, T, n_y, backend, strategy, repeat in config.cells()
    ]
    logger.info("Running %s benchmark cells", len(jobs))
    if config.parallel_cells > 1:
        with ProcessPoolExecutor(max_workers=config.parallel_cells) as pool:
            records = list(pool.map(_run_packed, jobs))
    else:
        records = [run_cell(*job) for job in jobs]
    return records_frame(records)


# =============================================================================
# Derived reports
# =============================================================================


def memory_frame(frame):
    """Peak factor nnz per backend, one row per (case, T, n_y, strategy)."""
    table = frame.pivot_table(
        index=["case", "T", "n_y", "strategy"], columns="backend",
        values="peak_nnz", aggfunc="max",
    )
    table.columns = [f"peak_nnz_{name}" for name in table.columns]
    return table.reset_index()


def crossover_frame(frame):
    """
    Smallest n_y at which the Schur backend beats direct-lu, per (case, T).

    KKT times are averaged over strategies and repeats. Cases where the
    Schur backend never wins get an empty cell.
    """
    means = frame.pivot_table(
        index=["case", "T", "n_y"], columns="backend",
        values="kkt_seconds", aggfunc="mean",
    ).reset_index()
    rows = []
    for (case, T), group in means.groupby(["case", "T"], sort=True):
        crossover = None
        if {"schur", "direct-lu"} <= set(group.columns):
            faster = group[group["schur"] < group["direct-lu"]]
            if not faster.empty:
                crossover = int(faster["n_y"].min())
        rows.append({"case": case, "T": int(T), "crossover_n_y": crossover})
    return pd.DataFrame(rows, columns=["case", "T", "crossover_n_y"]).astype(
        {"crossover_n_y": "Int64"}
    )


def strategy_frame(frame):
    """
    Seconds-per-iteration spread across distribution strategies.

    Medians over repeats of converged cells are compared per
    (case, T, n_y, backend); ``spread`` is (max - min) / min.
    """
    done = frame[frame["converged"].astype(bool)]
    medians = done.groupby(
        ["case", "T", "n_y", "backend", "strategy"], sort=True
    )["seconds_per_iteration"].median().reset_index()
    rows = []
    for (case, T, n_y, backend), group in medians.groupby(
        ["case", "T", "n_y", "backend"], sort=True
    ):
        fastest = float(group["seconds_per_iteration"].min())
        slowest = float(group["seconds_per_iteration"].max())
        rows.append({
            "case": case,
            "T": int(T),
            "n_y": int(n_y),
            "backend": backend,
            "strategies": int(len(group)),
            "spread": (slowest - fastest) / fastest if fastest > 0 else np.nan,
        })
    return pd.DataFrame(
        rows, columns=["case", "T", "n_y", "backend", "strategies", "spread"]
    )


def _max_relative_error(analytical, reference):
    analytical = np.asarray(
        analytical.toarray() if hasattr(analytical, "toarray") else analytical
    ).reshape(reference.shape)
    scale = max(1.0, float(np.max(np.abs(reference), initial=0.0)))
    return float(np.max(np.abs(analytical - reference), initial=0.0) / scale)


def derivative_check(case, label, T, n_y, strategy, config):
    """
    Time analytical first derivatives against central differences.

    :return: List of dict rows for derivatives.csv
    """
    scenario = scenario_for(case, T, n_y, strategy, config.dt, config.storage)
    problem = build_problem(scenario)
    x = initial_point(problem)

    tic = time.perf_counter()
    bundle = jac_all(problem, x)
    analytical_seconds = time.perf_counter() - tic

    checks = (
        ("F_X", lambda v: eval_objective(problem, v), bundle.f_x),
        ("G_X", lambda v: eval_equalities(problem, v), bundle.g_x),
        ("H_X", lambda v: eval_inequalities(problem, v), bundle.h_x),
    )
    rows = []
    for what, fun, analytical in checks:
        tic = time.perf_counter()
        reference = fd_oracle(fun, x)
        fd_seconds = time.perf_counter() - tic
        rows.append({
            "case": label,
            "T": int(T),
            "n_y": int(n_y),
            "what": what,
            "analytical_seconds": analytical_seconds,
            "fd_seconds": fd_seconds,
            "speedup": fd_seconds / analytical_seconds if analytical_seconds else np.inf,
            "max_relative_error": _max_relative_error(analytical, reference),
        })
    return rows


def derivatives_frame(config):
    """derivatives.csv rows for every (case, T, n_y) of the sweep."""
    rows = []
    strategy = sorted(config.strategies)[0]
    for spec in config.cases:
        case = resolve_case(spec, config.seed)
        for T in sorted(set(int(T) for T in config.T)):
            for n_y in sorted(set(int(n) for n in config.n_y)):
                rows.extend(derivative_check(case, case_label(spec), T, n_y, strategy, config))
    return pd.DataFrame(rows)


def write_reports(frame, out, derivatives=None):
    """
    Write the CSV set into ``out``.

    :param frame: Results DataFrame from run_bench
    :param out: Output directory, created if needed
    :param derivatives: Optional derivatives DataFrame
    :return: Dict of report name to path
    """
    os.makedirs(out, exist_ok=True)
    paths = {
        "results": os.path.join(out, RESULTS_FILE),
        "memory": os.path.join(out, MEMORY_FILE),
        "crossover": os.path.join(out, CROSSOVER_FILE),
        "strategies": os.path.join(out, STRATEGIES_FILE),
    }
    frame.to_csv(paths["results"], index=False)
    memory_frame(frame).to_csv(paths["memory"], index=False)
    crossover_frame(frame).to_csv(paths["crossover"], index=False)
    strategy_frame(frame).to_csv(paths["strategies"], index=False)
    if derivatives is not None:
        paths["derivatives"] = os.path.join(out, DERIVATIVES_FILE)
        derivatives.to_csv(paths["derivatives"], index=False)
    logger.info("Wrote benchmark reports to %s", out)
    return paths
