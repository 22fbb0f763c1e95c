"""
SVG figures for benchmark sweeps and single solutions.

matplotlib runs on the Agg backend so no display is needed.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from battflow.formulation import unpack  # noqa: E402
from battflow.logger import get_logger  # noqa: E402

logger = get_logger(__name__)

BACKEND_STYLES = {
    "schur": {"color": "tab:blue", "marker": "o"},
    "direct-lu": {"color": "tab:red", "marker": "s"},
}


def _save(figure, path):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    figure.savefig(path, format="svg", bbox_inches="tight")
    plt.close(figure)
    logger.debug("Wrote %s", path)
    return path


# =============================================================================
# Benchmark figures
# =============================================================================


def time_curves(frame, out):
    """
    Total KKT time against n_y, one figure per case, log-log axes.

    Lines are drawn per (backend, T); times are averaged over strategies and
    repeats. n_y = 0 sits on the linear part of a symlog x axis.

    :param frame: Results DataFrame
    :param out: Output directory
    :return: List of written paths
    """
    paths = []
    means = (
        frame.groupby(["case", "T", "n_y", "backend"], sort=True)["kkt_seconds"]
        .mean()
        .reset_index()
    )
    for case, case_rows in means.groupby("case", sort=True):
        figure, ax = plt.subplots(figsize=(6, 4))
        for (backend, T), line in case_rows.groupby(["backend", "T"], sort=True):
            style = BACKEND_STYLES.get(backend, {})
            ax.plot(
                line["n_y"], line["kkt_seconds"], label=f"{backend}, T={T}",
                linestyle="-" if backend == "schur" else "--", **style,
            )
        ax.set_xscale("symlog", linthresh=1.0)
        ax.set_yscale("log")
        ax.set_xlabel("number of storage devices")
        ax.set_ylabel("total KKT time (s)")
        ax.set_title(str(case))
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize="small")
        paths.append(_save(figure, os.path.join(out, f"time_{case}.svg")))
    return paths


def memory_plot(frame, path):
    """
    Peak live factor nnz per backend against n_y.

    :param frame: Results DataFrame
    :param path: SVG path
    :return: path
    """
    peaks = (
        frame.groupby(["case", "T", "n_y", "backend"], sort=True)["peak_nnz"]
        .max()
        .reset_index()
    )
    figure, ax = plt.subplots(figsize=(6, 4))
    for (case, T, backend), line in peaks.groupby(["case", "T", "backend"], sort=True):
        ax.plot(
            line["n_y"], line["peak_nnz"], label=f"{case} T={T} {backend}",
            **BACKEND_STYLES.get(backend, {}),
        )
    ax.set_xscale("symlog", linthresh=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("number of storage devices")
    ax.set_ylabel("peak factor nnz")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize="small")
    return _save(figure, path)


# =============================================================================
# Solution profiles
# =============================================================================


def solution_profiles(problem, solution, path):
    """
    Total load, total generation, storage exchange and SOC over the horizon.

    :param problem: Problem
    :param solution: Solution
    :param path: SVG path
    :return: path
    """
    case = problem.case
    parts = unpack(problem, solution.x)
    base = case.base_mva
    steps = np.arange(case.T)

    figure, (top, bottom) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    top.plot(steps, case.pd.sum(axis=0), label="total load", color="black")
    top.plot(steps, parts["pg"].sum(axis=0) * base, label="total generation")
    if case.n_storage:
        net = (parts["pch"] - parts["pdch"]).sum(axis=0) * base
        top.bar(steps, net, alpha=0.4, label="net storage charging")
        for i, soc in enumerate(parts["soc"]):
            bottom.plot(steps, soc, label=f"device {i}" if i < 10 else None)
    top.set_ylabel("MW")
    top.legend(fontsize="small")
    top.grid(True, alpha=0.3)
    bottom.set_xlabel("time step")
    bottom.set_ylabel("state of charge")
    bottom.set_ylim(-0.05, 1.05)
    bottom.grid(True, alpha=0.3)
    if case.n_storage:
        bottom.legend(fontsize="small", ncol=2)
    return _save(figure, path)
