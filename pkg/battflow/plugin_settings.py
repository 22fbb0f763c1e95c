__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"
__maintainer__ = "battflow developers"

from battflow.logger import get_logger

logger = get_logger(__name__)

PLUGIN_NAME = "battflow"
DISPLAY_NAME = "BattFlow"
DESCRIPTION = (
    "Multi-period AC optimal power flow for networks with stationary storage "
    "and electric vehicles. A primal-dual interior point method solves the "
    "per-iteration KKT system with a block Schur-complement algorithm or a "
    "direct sparse LU baseline."
)
AUTHOR = "battflow developers"
VERSION = "0.1.0"
SHORT_NAME = "battflow"
ENV_PREFIX = "BATTFLOW_"

# Declared settings. Values are read through logic.get_setting_value, which
# looks at BATTFLOW_<NAME> in the Django settings and then the environment
# before falling back to default.
SETTINGS = [
    {
        "name": "threads",
        "pretty_name": "Solver Threads",
        "types": "int",
        "description": (
            "Thread count exported to the BLAS/OpenMP runtimes by the CLI. "
            "Benchmarks are run single-threaded."
        ),
        "default": "1",
    },
    {
        "name": "log_level",
        "pretty_name": "Log Level",
        "types": "text",
        "description": "Root log level when no --verbosity flag is given.",
        "default": "WARNING",
    },
    {
        "name": "cost_scale",
        "pretty_name": "Objective Scaling",
        "types": "float",
        "description": (
            "Factor applied to the objective, its gradient and Hessian inside "
            "the interior point loop."
        ),
        "default": "1e-4",
    },
    {
        "name": "ldl_two_by_two_limit",
        "pretty_name": "LDL 2x2 Pivot Limit",
        "types": "int",
        "description": (
            "Largest Schur complement order for which LDL may fall back to "
            "dense 1x1/2x2 pivoting when diagonal pivots fail; above it the "
            "Schur complement is factorized by sparse LU."
        ),
        "default": "200",
    },
    {
        "name": "direct_ordering",
        "pretty_name": "Direct Backend Ordering",
        "types": "text",
        "description": (
            "Ordering of the direct-lu backend: AMD applied symmetrically, or "
            "one of the SuperLU column orderings NATURAL, COLAMD, "
            "MMD_AT_PLUS_A and MMD_ATA."
        ),
        "default": "AMD",
    },
    {
        "name": "profile_min",
        "pretty_name": "Load Profile Minimum",
        "types": "float",
        "description": "Smallest active-load scaling factor of the diurnal shape.",
        "default": "0.6",
    },
    {
        "name": "profile_max",
        "pretty_name": "Load Profile Maximum",
        "types": "float",
        "description": "Largest active-load scaling factor of the diurnal shape.",
        "default": "1.0",
    },
    {
        "name": "profile_start_hour",
        "pretty_name": "Load Profile Start Hour",
        "types": "float",
        "description": "Clock hour of the first time step of a transmission horizon.",
        "default": "0.0",
    },
    {
        "name": "storage_emax_mwh",
        "pretty_name": "Storage Capacity",
        "types": "float",
        "description": "Energy capacity of stationary storage devices (MWh).",
        "default": "100",
    },
    {
        "name": "storage_pmax_mw",
        "pretty_name": "Storage Power Limit",
        "types": "float",
        "description": "Charge and discharge limit of stationary storage (MW).",
        "default": "10",
    },
    {
        "name": "storage_eff_ch",
        "pretty_name": "Charge Efficiency",
        "types": "float",
        "description": "Charging efficiency of stationary storage.",
        "default": "0.95",
    },
    {
        "name": "storage_eff_dch",
        "pretty_name": "Discharge Efficiency",
        "types": "float",
        "description": "Discharging efficiency of stationary storage.",
        "default": "0.97",
    },
    {
        "name": "ev_battery_kwh",
        "pretty_name": "EV Battery Capacity",
        "types": "float",
        "description": "Battery capacity assumed for every generated EV (kWh).",
        "default": "60",
    },
    {
        "name": "ev_high_consumption",
        "pretty_name": "High Consumption Class",
        "types": "float",
        "description": (
            "Consumption of the high-consumption EV class (kWh/100km). The "
            "low class uses the 18 kWh/100km boundary."
        ),
        "default": "24",
    },
]

SETTINGS_BY_NAME = {setting["name"]: setting for setting in SETTINGS}


def get_self():
    """Return the declared setting definitions keyed by name."""
    return SETTINGS_BY_NAME


def env_name(setting_name):
    """Environment variable consulted for a setting."""
    return f"{ENV_PREFIX}{setting_name.upper()}"
