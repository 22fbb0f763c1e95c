"""
BattFlow Logic Module

Shared helper functions: setting lookup and the report builders used by the
management commands.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import os

import numpy as np
from django.conf import settings as django_settings
from django.core.exceptions import ImproperlyConfigured

from battflow import plugin_settings
from battflow.logger import get_logger

logger = get_logger(__name__)


# =============================================================================
# Setting Helpers
# =============================================================================

_CASTS = {
    "int": int,
    "float": float,
    "text": str,
}


def _django_setting(name):
    """Value of ``name`` in the Django settings, or None when unset or unconfigured."""
    try:
        return getattr(django_settings, name, None)
    except ImproperlyConfigured:
        return None


def get_setting_value(setting_name, default=None):
    """
    Get a setting value, cast to its declared type.

    :param setting_name: Name of the setting
    :param default: Value returned when the setting is not configured anywhere
        and not declared
    :return: Setting value

    Lookup order: the Django setting BATTFLOW_<NAME>, the environment variable
    of the same name, then the declared default.
    """
    definition = plugin_settings.get_self().get(setting_name)
    name = plugin_settings.env_name(setting_name)
    raw = _django_setting(name)
    if raw is None or raw == "":
        raw = os.environ.get(name)
    if raw is None or raw == "":
        if definition is None:
            return default
        raw = definition["default"]
    if definition is None:
        return raw
    cast = _CASTS.get(definition["types"], str)
    try:
        return cast(raw)
    except (ValueError, TypeError):
        logger.warning(
            "Invalid value %r for setting %s, using default", raw, setting_name
        )
        return cast(definition["default"])


def storage_defaults():
    """
    Return the stationary storage parameters used by benchmark scenarios.

    :return: Dict with emax_mwh, pmax_mw, eff_ch, eff_dch
    """
    return {
        "emax_mwh": get_setting_value("storage_emax_mwh"),
        "pmax_mw": get_setting_value("storage_pmax_mw"),
        "eff_ch": get_setting_value("storage_eff_ch"),
        "eff_dch": get_setting_value("storage_eff_dch"),
    }


# =============================================================================
# Report Builders
# =============================================================================


def _as_list(array, decimals=None):
    array = np.asarray(array, dtype=float)
    if decimals is not None:
        array = np.round(array, decimals)
    return array.tolist()


def build_solution_report(problem, solution):
    """
    Build the JSON-serializable report written by ``battflow solve``.

    :param problem: Problem instance
    :param solution: Solution instance
    :return: Dict with dispatch, storage trajectories, voltages and residuals
    """
    from battflow.formulation import unpack

    case = problem.case
    parts = unpack(problem, solution.x)
    base = case.base_mva
    report = {
        "case": case.name,
        "T": case.T,
        "dt_hours": case.dt,
        "n_bus": case.n_bus,
        "n_gen": case.n_gen,
        "n_storage": case.n_storage,
        "converged": bool(solution.converged),
        "iterations": int(solution.iterations),
        "objective": float(solution.objective),
        "residuals": {key: float(val) for key, val in solution.residuals.items()},
        "timing": {key: float(val) for key, val in solution.timing.items()},
        "peak_factor_nnz": int(solution.peak_nnz),
        "dispatch": {
            "pg_mw": _as_list(parts["pg"] * base),
            "qg_mvar": _as_list(parts["qg"] * base),
        },
        "voltages": {
            "vm_pu": _as_list(parts["vm"]),
            "va_deg": _as_list(np.degrees(parts["va"])),
        },
        "storage": {
            "bus": [int(b) for b in case.batt[:, 0]] if case.n_storage else [],
            "soc": _as_list(parts["soc"]),
            "pch_mw": _as_list(parts["pch"] * base),
            "pdch_mw": _as_list(parts["pdch"] * base),
            "qs_mvar": _as_list(parts["qs"] * base),
        },
        "load": {
            "pd_total_mw": _as_list(case.pd.sum(axis=0)),
            "qd_total_mvar": _as_list(case.qd.sum(axis=0)),
        },
    }
    return report


def build_case_summary(case):
    """
    Summarize a parsed case for ``battflow validate``.

    :param case: Case instance
    :return: Dict with dimensions and schedule statistics
    """
    summary = {
        "name": case.name,
        "baseMVA": float(case.base_mva),
        "n_bus": case.n_bus,
        "n_branch": int(case.branch.shape[0]),
        "n_gen": case.n_gen,
        "n_storage": case.n_storage,
        "T": case.T,
        "dt_hours": case.dt,
        "stationary": bool(case.is_stationary()),
        "total_load_mw": _as_list(case.pd.sum(axis=0), decimals=6),
    }
    if case.n_storage:
        summary["plugged_steps"] = [int(n) for n in case.avbp.sum(axis=1)]
    return summary
