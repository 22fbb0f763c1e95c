"""
Case documents, load profiles, EV schedules and storage placement.

A case document is one JSON object holding the four MATPOWER-style tables
(bus, branch, gen, gencost) plus the storage extension: the BATT table, the
binary availability schedules AVBP, CONCH, CONDI, AVBQ and AVG, the initial and
minimum state-of-charge matrices SOCi and SOCMi, and the PD/QD load series.
Binary rows are bitstrings, SOCi/SOCMi are ``[row, col, value]`` triplets.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from battflow import logic
from battflow.exceptions import CaseValidationError
from battflow.logger import get_logger

logger = get_logger(__name__)

DATA_DIR = os.path.join(os.path.dirname(__file__), "test", "data")

# bus table columns
BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV, ZONE, VMAX, VMIN = range(13)
PQ, PV, REF, NONE = 1, 2, 3, 4

# branch table columns
(F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C,
 TAP, SHIFT, BR_STATUS, ANGMIN, ANGMAX) = range(13)

# gen table columns
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN = range(10)

# gencost table columns
MODEL, STARTUP, SHUTDOWN, NCOST, COST = range(5)
PW_LINEAR, POLYNOMIAL = 1, 2

# BATT table columns
(BATT_BUS, SOC_OPT, PCH_OPT, PDCH_OPT, Q_INJ_OPT, SOC_MAX, SOC_MIN, QS_MAX,
 QS_MIN, E_MAX, PCH_MAX, PDCH_MAX, EFF_CH, EFF_DCH) = range(14)
BATT_COLUMNS = 14

SCHEDULES = ("avbp", "conch", "condi", "avbq")
STRATEGIES = ("first-last", "last-first", "load-bus", "fair-dist")

LOW_CONSUMPTION = 18.0
WINDOW_START_HOUR = 12.0


# =============================================================================
# Case
# =============================================================================


@dataclass(frozen=True, eq=False)
class Case:
    """Parsed network, storage and load description. Loads are in MW/MVAr."""

    name: str
    base_mva: float
    bus: np.ndarray
    branch: np.ndarray
    gen: np.ndarray
    gencost: np.ndarray
    batt: np.ndarray
    avbp: np.ndarray
    conch: np.ndarray
    condi: np.ndarray
    avbq: np.ndarray
    avg: np.ndarray
    soci: np.ndarray
    socmi: np.ndarray
    pd: np.ndarray
    qd: np.ndarray
    dt: float = 1.0
    price: np.ndarray = None

    def __post_init__(self):
        if self.price is None:
            object.__setattr__(self, "price", np.ones(self.pd.shape[1]))
        for name in (
            "bus", "branch", "gen", "gencost", "batt", "avbp", "conch", "condi",
            "avbq", "avg", "soci", "socmi", "pd", "qd", "price",
        ):
            array = np.array(getattr(self, name))
            array.setflags(write=False)
            object.__setattr__(self, name, array)

    @property
    def n_bus(self):
        return int(self.bus.shape[0])

    @property
    def n_gen(self):
        return int(self.gen.shape[0])

    @property
    def n_storage(self):
        return int(self.batt.shape[0])

    @property
    def T(self):
        return int(self.pd.shape[1])

    @property
    def bus_ids(self):
        return self.bus[:, BUS_I].astype(int)

    def bus_index(self):
        """Map external bus id to internal row index."""
        return {int(b): k for k, b in enumerate(self.bus[:, BUS_I])}

    def is_stationary(self):
        """True when every device is available with charge and discharge enabled at all t."""
        if self.n_storage == 0:
            return bool(np.all(self.avg == 1))
        return bool(
            np.all(self.avbp == 1)
            and np.all(self.conch == 1)
            and np.all(self.condi == 1)
            and np.all(self.avg == 1)
        )


def replace(case, **changes):
    """Return a validated copy of ``case`` with fields replaced."""
    updated = dataclasses.replace(case, **changes)
    validate_case(updated)
    return updated


# =============================================================================
# Validation
# =============================================================================


def validate_case(case):
    """
    Check every case invariant.

    :param case: Case instance
    :raises CaseValidationError: naming the offending matrix, row and column
    """
    n_b, n_g, n_y, T = case.n_bus, case.n_gen, case.n_storage, case.T
    if case.base_mva <= 0:
        raise CaseValidationError("baseMVA must be positive", matrix="baseMVA")
    if n_b < 1:
        raise CaseValidationError("at least one bus is required", matrix="bus")
    if T < 1:
        raise CaseValidationError("PD needs at least one column", matrix="pd")
    if case.dt <= 0:
        raise CaseValidationError("dt must be positive", matrix="dt")

    ids = case.bus_ids
    if np.unique(ids).size != n_b:
        raise CaseValidationError("duplicate bus ids", matrix="bus")
    known = set(ids.tolist())
    for row, (f, t) in enumerate(case.branch[:, [F_BUS, T_BUS]].astype(int)):
        if f not in known:
            raise CaseValidationError(f"undeclared bus {f}", matrix="branch", row=row, col=F_BUS)
        if t not in known:
            raise CaseValidationError(f"undeclared bus {t}", matrix="branch", row=row, col=T_BUS)
    for row, b in enumerate(case.gen[:, GEN_BUS].astype(int)):
        if b not in known:
            raise CaseValidationError(f"undeclared bus {b}", matrix="gen", row=row, col=GEN_BUS)
    for row in range(n_g):
        if case.gen[row, PMIN] > case.gen[row, PMAX]:
            raise CaseValidationError("Pmin above Pmax", matrix="gen", row=row, col=PMIN)
        if case.gen[row, QMIN] > case.gen[row, QMAX]:
            raise CaseValidationError("Qmin above Qmax", matrix="gen", row=row, col=QMIN)
    for row in range(n_b):
        if case.bus[row, VMIN] > case.bus[row, VMAX]:
            raise CaseValidationError("Vmin above Vmax", matrix="bus", row=row, col=VMIN)

    if case.gencost.shape[0] not in (n_g, 2 * n_g):
        raise CaseValidationError(
            f"expected {n_g} or {2 * n_g} rows, got {case.gencost.shape[0]}",
            matrix="gencost",
        )

    _check_shape(case.pd, (n_b, T), "pd")
    _check_shape(case.qd, (n_b, T), "qd")
    _check_shape(case.avg, (n_g, T), "avg")
    _check_binary(case.avg, "avg")
    if case.price.shape != (T,):
        raise CaseValidationError(f"expected length {T}", matrix="price")

    if n_y:
        if case.batt.shape[1] != BATT_COLUMNS:
            raise CaseValidationError(
                f"expected {BATT_COLUMNS} columns", matrix="batt"
            )
    for name in SCHEDULES:
        _check_shape(getattr(case, name), (n_y, T), name)
        _check_binary(getattr(case, name), name)
    _check_shape(case.soci, (n_y, T), "soci")
    _check_shape(case.socmi, (n_y, T), "socmi")

    for i in range(n_y):
        row = case.batt[i]
        if int(row[BATT_BUS]) not in known:
            raise CaseValidationError(
                f"undeclared bus {int(row[BATT_BUS])}", matrix="batt", row=i, col=BATT_BUS
            )
        for col in (EFF_CH, EFF_DCH):
            if not 0.0 < row[col] <= 1.0:
                raise CaseValidationError("efficiency outside (0, 1]", matrix="batt", row=i, col=col)
        if row[SOC_MIN] > row[SOC_MAX]:
            raise CaseValidationError("SOCmin above SOCmax", matrix="batt", row=i, col=SOC_MIN)
        if row[E_MAX] <= 0:
            raise CaseValidationError("capacity must be positive", matrix="batt", row=i, col=E_MAX)
        if row[QS_MIN] > row[QS_MAX]:
            raise CaseValidationError("Qsmin above Qsmax", matrix="batt", row=i, col=QS_MIN)

    # Charge and discharge need active-power availability; the converse is free
    for name in ("conch", "condi"):
        bad = np.argwhere((case.avbp == 0) & (getattr(case, name) == 1))
        if bad.size:
            i, t = (int(v) for v in bad[0])
            raise CaseValidationError(
                "enabled while AVBP is 0", matrix=name, row=i, col=t
            )

    arrivals = arrival_mask(case.avbp)
    departures = departure_mask(case.avbp)
    for name, matrix, allowed in (
        ("soci", case.soci, arrivals),
        ("socmi", case.socmi, departures),
    ):
        bad = np.argwhere((matrix < 0) | (matrix > 1))
        if bad.size:
            i, t = (int(v) for v in bad[0])
            raise CaseValidationError("value outside [0, 1]", matrix=name, row=i, col=t)
        bad = np.argwhere((matrix > 0) & ~allowed)
        if bad.size:
            i, t = (int(v) for v in bad[0])
            raise CaseValidationError(
                "nonzero away from an allowed step", matrix=name, row=i, col=t
            )


def _check_shape(array, shape, name):
    if tuple(array.shape) != tuple(shape):
        raise CaseValidationError(f"expected shape {shape}, got {array.shape}", matrix=name)


def _check_binary(array, name):
    bad = np.argwhere((array != 0) & (array != 1))
    if bad.size:
        i, t = (int(v) for v in bad[0])
        raise CaseValidationError("not binary", matrix=name, row=i, col=t)


def arrival_mask(avbp):
    """Steps where SOCi may be nonzero: t=1 when present, or a 0->1 change."""
    avbp = np.asarray(avbp)
    mask = np.zeros(avbp.shape, dtype=bool)
    if avbp.size:
        mask[:, 0] = avbp[:, 0] == 1
        mask[:, 1:] = (avbp[:, :-1] == 0) & (avbp[:, 1:] == 1)
    return mask


def departure_mask(avbp):
    """Steps where SOCMi may be nonzero: a 1->0 change next step, or t=T when present."""
    avbp = np.asarray(avbp)
    mask = np.zeros(avbp.shape, dtype=bool)
    if avbp.size:
        mask[:, :-1] = (avbp[:, :-1] == 1) & (avbp[:, 1:] == 0)
        mask[:, -1] = avbp[:, -1] == 1
    return mask


# =============================================================================
# Parsing and serialization
# =============================================================================


def _table(document, key, min_cols, pad=None, required=True):
    raw = document.get(key)
    if raw is None:
        if required:
            raise CaseValidationError("missing table", matrix=key)
        return np.zeros((0, min_cols))
    try:
        rows = [list(map(float, row)) for row in raw]
    except (TypeError, ValueError) as err:
        raise CaseValidationError(f"non-numeric entry ({err})", matrix=key) from err
    if not rows:
        return np.zeros((0, min_cols))
    width = max(len(row) for row in rows)
    if pad is not None:
        width = max(width, len(pad))
    for idx, row in enumerate(rows):
        if len(row) < min_cols:
            raise CaseValidationError(
                f"expected at least {min_cols} columns", matrix=key, row=idx
            )
        if len(row) < width:
            if pad is None:
                raise CaseValidationError("ragged rows", matrix=key, row=idx)
            row.extend(pad[len(row):width])
    return np.array(rows, dtype=float)


def _bit_rows(document, key, n_rows, T):
    raw = document.get(key)
    if raw is None:
        return np.ones((n_rows, T), dtype=np.int8)
    if len(raw) != n_rows:
        raise CaseValidationError(f"expected {n_rows} rows, got {len(raw)}", matrix=key)
    matrix = np.zeros((n_rows, T), dtype=np.int8)
    for i, row in enumerate(raw):
        bits = list(row) if isinstance(row, str) else row
        if len(bits) != T:
            raise CaseValidationError(f"expected {T} entries", matrix=key, row=i)
        for t, bit in enumerate(bits):
            if str(bit) not in ("0", "1"):
                raise CaseValidationError("not binary", matrix=key, row=i, col=t)
            matrix[i, t] = int(bit)
    return matrix


def _triplets(document, key, n_rows, T):
    matrix = np.zeros((n_rows, T))
    for idx, entry in enumerate(document.get(key) or []):
        if len(entry) != 3:
            raise CaseValidationError("expected [row, col, value]", matrix=key, row=idx)
        i, t, value = int(entry[0]), int(entry[1]), float(entry[2])
        if not (0 <= i < n_rows and 0 <= t < T):
            raise CaseValidationError("index out of range", matrix=key, row=i, col=t)
        matrix[i, t] += value
    return matrix


def _series(document, key, base, T):
    raw = document.get(key)
    if raw is None:
        return np.repeat(base[:, None], T, axis=1)
    matrix = np.array(raw, dtype=float)
    if matrix.ndim != 2 or matrix.shape != (base.size, T):
        raise CaseValidationError(
            f"expected shape {(base.size, T)}, got {matrix.shape}", matrix=key
        )
    return matrix


def parse_case(text):
    """
    Parse and validate a case document.

    :param text: JSON string, bytes or an already decoded dict
    :return: Case
    """
    if isinstance(text, dict):
        document = text
    else:
        try:
            document = json.loads(text)
        except (TypeError, ValueError) as err:
            raise CaseValidationError(f"invalid JSON ({err})", matrix="document") from err
    if not isinstance(document, dict):
        raise CaseValidationError("expected a JSON object", matrix="document")
    if "baseMVA" not in document:
        raise CaseValidationError("missing value", matrix="baseMVA")

    bus = _table(document, "bus", 13)
    branch = _table(
        document, "branch", 11,
        pad=[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, -360, 360],
    )
    gen = _table(document, "gen", 10)
    gencost = _table(document, "gencost", 4, pad=[0] * 7)
    batt = _table(document, "batt", BATT_COLUMNS, required=False)
    if batt.shape[1] != BATT_COLUMNS and batt.shape[0] == 0:
        batt = np.zeros((0, BATT_COLUMNS))

    if "pd" in document:
        T = len(document["pd"][0]) if document["pd"] else 0
    else:
        T = int(document.get("T", 1))
    n_y, n_g = batt.shape[0], gen.shape[0]

    pd = _series(document, "pd", bus[:, PD] if bus.size else np.zeros(0), T)
    qd = _series(document, "qd", bus[:, QD] if bus.size else np.zeros(0), T)
    schedules = {key: _bit_rows(document, key, n_y, T) for key in SCHEDULES}
    avg = _bit_rows(document, "avg", n_g, T)

    soci = _triplets(document, "soci", n_y, T)
    socmi = _triplets(document, "socmi", n_y, T)
    price = document.get("price")

    case = Case(
        name=str(document.get("name", "case")),
        base_mva=float(document["baseMVA"]),
        bus=bus,
        branch=branch,
        gen=gen,
        gencost=gencost,
        batt=batt,
        avg=avg,
        soci=soci,
        socmi=socmi,
        pd=pd,
        qd=qd,
        dt=float(document.get("dt", 1.0)),
        price=None if price is None else np.array(price, dtype=float),
        **schedules,
    )
    validate_case(case)
    logger.debug(
        "Parsed case %s: n_b=%s n_g=%s n_y=%s T=%s",
        case.name, case.n_bus, case.n_gen, case.n_storage, case.T,
    )
    return case


def load_case(path):
    """
    Read and parse a ``*.battcase.json`` file.

    :param path: File path
    :return: Case
    """
    with open(path, "r", encoding="utf-8") as handle:
        return parse_case(handle.read())


def load_bundled_case(name="case9"):
    """
    Load a case shipped in ``battflow/test/data``.

    :param name: Case name without suffix
    :return: Case
    """
    return load_case(os.path.join(DATA_DIR, f"{name}.battcase.json"))


def _bits(matrix):
    return ["".join(str(int(v)) for v in row) for row in np.asarray(matrix)]


def _nonzero_triplets(matrix):
    rows, cols = np.nonzero(matrix)
    return [[int(i), int(t), float(matrix[i, t])] for i, t in zip(rows, cols)]


def _rows(matrix):
    return [[float(v) for v in row] for row in np.asarray(matrix)]


def case_to_document(case):
    """Inverse of parse_case at the dict level."""
    document = {
        "name": case.name,
        "baseMVA": float(case.base_mva),
        "dt": float(case.dt),
        "bus": _rows(case.bus),
        "branch": _rows(case.branch),
        "gen": _rows(case.gen),
        "gencost": _rows(case.gencost),
        "batt": _rows(case.batt),
        "avg": _bits(case.avg),
        "soci": _nonzero_triplets(case.soci),
        "socmi": _nonzero_triplets(case.socmi),
        "pd": _rows(case.pd),
        "qd": _rows(case.qd),
        "price": [float(v) for v in case.price],
    }
    for key in SCHEDULES:
        document[key] = _bits(getattr(case, key))
    return document


def serialize_case(case, indent=None):
    """
    Serialize a case to a JSON document.

    :param case: Case
    :param indent: Optional JSON indentation
    :return: str
    """
    return json.dumps(case_to_document(case), indent=indent, sort_keys=True)


# =============================================================================
# Load profiles
# =============================================================================


def _bump(hours, centre, width):
    distance = np.abs((hours - centre + 12.0) % 24.0 - 12.0)
    half = width / 2.0
    return np.where(distance < half, 0.5 * (1.0 + np.cos(np.pi * distance / half)), 0.0)


def diurnal_shape(hours):
    """
    Household-like daily shape in [0, 1] with a night trough and an evening peak.

    :param hours: Clock hours (any real, taken modulo 24)
    :return: Array of the same shape
    """
    hours = np.asarray(hours, dtype=float) % 24.0
    return np.maximum.reduce([
        0.55 * _bump(hours, 8.5, 9.0),
        0.35 * _bump(hours, 13.5, 6.0),
        1.0 * _bump(hours, 19.0, 11.0),
    ])


def diurnal_factor(T, dt=1.0, start_hour=None, low=None, high=None):
    """
    Active-load scaling factors c_p(t) for a horizon.

    :param T: Number of steps
    :param dt: Step length (hours)
    :param start_hour: Clock hour of the first step
    :param low: Smallest factor
    :param high: Largest factor
    :return: Array of length T
    """
    if start_hour is None:
        start_hour = logic.get_setting_value("profile_start_hour")
    if low is None:
        low = logic.get_setting_value("profile_min")
    if high is None:
        high = logic.get_setting_value("profile_max")
    hours = start_hour + (np.arange(T) + 0.5) * dt
    return low + (high - low) * diurnal_shape(hours)


def load_profiles(base_p, base_q, T, profile="diurnal", dt=1.0, start_hour=None):
    """
    Build PD/QD series from base loads.

    :param base_p: Base active load per bus (MW)
    :param base_q: Base reactive load per bus (MVAr)
    :param T: Number of steps
    :param profile: "diurnal", "constant", a callable of the step index array,
        or an array of T factors
    :param dt: Step length (hours)
    :param start_hour: Clock hour of the first step
    :return: Tuple (pd, qd) of n_b-by-T arrays
    """
    if int(T) < 1:
        raise ValueError(f"T must be positive, got {T}")
    T = int(T)
    base_p = np.asarray(base_p, dtype=float)
    base_q = np.asarray(base_q, dtype=float)
    if isinstance(profile, str):
        if profile == "diurnal":
            c_p = diurnal_factor(T, dt, start_hour)
        elif profile == "constant":
            c_p = np.ones(T)
        else:
            raise ValueError(f"Unknown load profile: {profile}")
    elif callable(profile):
        c_p = np.asarray(profile(np.arange(T)), dtype=float)
    else:
        c_p = np.asarray(profile, dtype=float)
    if c_p.shape != (T,):
        raise ValueError(f"Profile must give {T} factors")
    c_q = np.ones(T)
    return np.outer(base_p, c_p), np.outer(base_q, c_q)


# =============================================================================
# EV schedules
# =============================================================================


@dataclass
class EvGenParams:
    """
    Inputs of the EV fleet generator. Times are hours, distances km.

    Every EV must leave with SOCmax. With ``cap_socmi_to_reach`` the departure
    target drops to 90% of what the charger can add during the stay when SOCmax
    is not reachable with a 5% margin.
    """

    n_ev: int = 10
    T: int = 96
    dt: float = 0.25
    mean_distance: float = 52.0
    std_distance: float = 22.0
    daily_distance_jitter: float = 0.10
    frac_low_consumption: float = 0.80
    frac_high_consumption: float = 0.20
    mean_arrival: float = 17.0
    std_arrival_population: float = 90.0
    std_arrival_daily: float = 15.0
    work_offset: float = 9.5
    charger_mix: list = field(
        default_factory=lambda: [[230.0, 10.0, 0.70], [230.0, 16.0, 0.20], [230.0, 48.0, 0.10]]
    )
    battery_kwh: float = None
    high_consumption: float = None
    eff_ch: float = 0.95
    eff_dch: float = 0.97
    buses: list = field(default_factory=lambda: [1])
    seed: int = 0
    cap_socmi_to_reach: bool = False

    def __post_init__(self):
        if self.battery_kwh is None:
            self.battery_kwh = logic.get_setting_value("ev_battery_kwh")
        if self.high_consumption is None:
            self.high_consumption = logic.get_setting_value("ev_high_consumption")
        if self.n_ev < 0 or self.T < 1 or self.dt <= 0:
            raise ValueError("n_ev must be non-negative, T and dt positive")
        positive = (
            self.mean_distance, self.battery_kwh, self.high_consumption,
            self.work_offset, self.eff_ch, self.eff_dch,
        )
        if any(value <= 0 for value in positive):
            raise ValueError("EV parameters must be positive")
        spreads = (
            self.std_distance, self.daily_distance_jitter,
            self.std_arrival_population, self.std_arrival_daily,
        )
        if any(value < 0 for value in spreads):
            raise ValueError("Standard deviations must be non-negative")
        if not math.isclose(self.frac_low_consumption + self.frac_high_consumption, 1.0):
            raise ValueError("Consumption class fractions must sum to 1")
        shares = [entry[2] for entry in self.charger_mix]
        if any(s < 0 for s in shares) or not math.isclose(sum(shares), 1.0):
            raise ValueError("Charger mix shares must be non-negative and sum to 1")
        if not self.buses:
            raise ValueError("At least one bus is required")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"Unknown EV parameters: {sorted(unknown)}")
        return cls(**data)

    @property
    def window(self):
        return self.T * self.dt


@dataclass(frozen=True, eq=False)
class EvFleet:
    """Generated BATT rows, schedules and the sampled trip data behind them."""

    batt: np.ndarray
    avbp: np.ndarray
    conch: np.ndarray
    condi: np.ndarray
    avbq: np.ndarray
    soci: np.ndarray
    socmi: np.ndarray
    arrival: np.ndarray
    departure: np.ndarray
    distance: np.ndarray
    consumption: np.ndarray
    charger_kw: np.ndarray
    dt: float

    def to_fragment(self):
        """Mergeable case fragment with the seven EV matrices."""
        return {
            "T": int(self.avbp.shape[1]),
            "dt": float(self.dt),
            "batt": _rows(self.batt),
            "avbp": _bits(self.avbp),
            "conch": _bits(self.conch),
            "condi": _bits(self.condi),
            "avbq": _bits(self.avbq),
            "soci": _nonzero_triplets(self.soci),
            "socmi": _nonzero_triplets(self.socmi),
        }


def _quota(rng, n, shares):
    """Category labels with counts matching shares, in random order."""
    shares = np.asarray(shares, dtype=float)
    counts = np.floor(shares * n).astype(int)
    remainder = shares * n - counts
    for k in np.argsort(-remainder, kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    labels = np.repeat(np.arange(shares.size), counts)
    return rng.permutation(labels)


def generate_ev_schedules(params):
    """
    Sample an EV fleet over the 12:00-to-12:00 window.

    :param params: EvGenParams
    :return: EvFleet, deterministic for a fixed seed
    """
    p = params
    if p.window < p.work_offset:
        raise ValueError(
            f"Window of {p.window} h is shorter than the {p.work_offset} h stay"
        )
    rng = np.random.default_rng(p.seed)
    n, T, dt = p.n_ev, p.T, p.dt

    arrival = (
        (p.mean_arrival - WINDOW_START_HOUR)
        + rng.normal(0.0, p.std_arrival_population / 60.0, n)
        + rng.normal(0.0, p.std_arrival_daily / 60.0, n)
    )
    arrival = np.clip(arrival, 0.0, p.window - p.work_offset)
    departure = arrival + p.work_offset

    mean_distance = np.clip(rng.normal(p.mean_distance, p.std_distance, n), 1.0, None)
    distance = np.clip(
        mean_distance * (1.0 + rng.normal(0.0, p.daily_distance_jitter, n)), 0.0, None
    )
    high = _quota(rng, n, [p.frac_low_consumption, p.frac_high_consumption]) == 1
    consumption = np.where(high, p.high_consumption, LOW_CONSUMPTION)
    chargers = _quota(rng, n, [entry[2] for entry in p.charger_mix])
    kw_options = np.array([entry[0] * entry[1] / 1000.0 for entry in p.charger_mix])
    charger_kw = kw_options[chargers] if n else np.zeros(0)

    energy = distance * consumption / 100.0
    soc_arrival = np.clip((p.battery_kwh - energy) / p.battery_kwh, 0.0, 1.0)

    avbp = np.zeros((n, T), dtype=np.int8)
    soci = np.zeros((n, T))
    socmi = np.zeros((n, T))
    soc_max = 1.0
    for i in range(n):
        first = min(int(math.floor(arrival[i] / dt + 1e-9)), T - 1)
        last = min(int(math.floor(departure[i] / dt + 1e-9)), T - 1)
        avbp[i, first:last + 1] = 1
        soci[i, first] = soc_arrival[i]
        socmi[i, last] = soc_max
        if p.cap_socmi_to_reach:
            reachable = (
                p.eff_ch * charger_kw[i] * (last - first + 1) * dt / p.battery_kwh
            )
            if soc_arrival[i] + reachable < soc_max + 0.05:
                socmi[i, last] = min(soc_arrival[i] + 0.9 * reachable, soc_max)

    emax_mwh = p.battery_kwh / 1000.0
    buses = np.array([p.buses[i % len(p.buses)] for i in range(n)], dtype=float)
    batt = np.zeros((n, BATT_COLUMNS))
    batt[:, BATT_BUS] = buses
    batt[:, SOC_MAX] = soc_max
    batt[:, SOC_MIN] = 0.0
    batt[:, E_MAX] = emax_mwh
    batt[:, PCH_MAX] = charger_kw / 1000.0
    batt[:, PDCH_MAX] = charger_kw / 1000.0
    batt[:, EFF_CH] = p.eff_ch
    batt[:, EFF_DCH] = p.eff_dch

    logger.debug("Generated %s EV schedules over T=%s, dt=%s h", n, T, dt)
    return EvFleet(
        batt=batt,
        avbp=avbp,
        conch=avbp.copy(),
        condi=np.zeros_like(avbp),
        avbq=np.zeros_like(avbp),
        soci=soci,
        socmi=socmi,
        arrival=arrival + WINDOW_START_HOUR,
        departure=departure + WINDOW_START_HOUR,
        distance=distance,
        consumption=consumption,
        charger_kw=charger_kw,
        dt=dt,
    )


def parse_duration(text):
    """
    Parse a step length such as ``15min``, ``7.5min``, ``30sec``, ``1h``.

    :param text: Duration string or number of hours
    :return: Hours as float
    """
    if isinstance(text, (int, float)):
        return float(text)
    value = str(text).strip().lower()
    for suffix, factor in (
        ("min", 1 / 60.0), ("sec", 1 / 3600.0), ("s", 1 / 3600.0),
        ("hours", 1.0), ("h", 1.0),
    ):
        if value.endswith(suffix):
            number = value[: -len(suffix)].strip()
            try:
                return float(number) * factor
            except ValueError:
                break
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"Cannot parse duration: {text}")


def steps_per_day(dt):
    """Number of steps of length ``dt`` hours in 24 hours."""
    return int(round(24.0 / dt))


# =============================================================================
# Storage placement and scenario assembly
# =============================================================================


def distribute_storage(case, n_y, strategy="first-last"):
    """
    Choose the bus of each storage device.

    :param case: Case
    :param n_y: Number of devices
    :param strategy: first-last, last-first, load-bus or fair-dist
    :return: Array of bus ids
    """
    key = strategy.strip().lower().replace("_", "-")
    if key not in STRATEGIES:
        raise ValueError(f"Unknown distribution strategy: {strategy}")
    ids = case.bus_ids
    n_b = ids.size
    if n_b < 1:
        raise ValueError("Case has no buses")
    k = np.arange(n_y)
    if key == "first-last":
        return ids[k % n_b]
    if key == "last-first":
        return ids[n_b - 1 - (k % n_b)]
    if key == "load-bus":
        loaded = ids[case.bus[:, PD] != 0]
        if loaded.size == 0:
            raise ValueError("Load-Bus strategy needs at least one loaded bus")
        return loaded[k % loaded.size]
    stride = max(1, n_b // max(n_y, 1))
    return ids[((k + 1) * stride - 1) % n_b]


def attach_storage(case, buses, emax_mwh=None, pmax_mw=None, eff_ch=None, eff_dch=None):
    """
    Append stationary devices with all-ones schedules and zero initial SOC.

    :param case: Case
    :param buses: Bus ids, one per device
    :return: New Case
    """
    defaults = logic.storage_defaults()
    emax_mwh = defaults["emax_mwh"] if emax_mwh is None else emax_mwh
    pmax_mw = defaults["pmax_mw"] if pmax_mw is None else pmax_mw
    eff_ch = defaults["eff_ch"] if eff_ch is None else eff_ch
    eff_dch = defaults["eff_dch"] if eff_dch is None else eff_dch

    buses = np.asarray(buses, dtype=float)
    n_new, T = buses.size, case.T
    rows = np.zeros((n_new, BATT_COLUMNS))
    rows[:, BATT_BUS] = buses
    rows[:, SOC_MAX] = 1.0
    rows[:, SOC_MIN] = 0.0
    rows[:, E_MAX] = emax_mwh
    rows[:, PCH_MAX] = pmax_mw
    rows[:, PDCH_MAX] = pmax_mw
    rows[:, EFF_CH] = eff_ch
    rows[:, EFF_DCH] = eff_dch
    ones = np.ones((n_new, T), dtype=np.int8)
    zeros = np.zeros((n_new, T))
    changes = {
        "batt": np.vstack([case.batt.reshape(-1, BATT_COLUMNS), rows]),
        "soci": np.vstack([case.soci.reshape(-1, T), zeros]),
        "socmi": np.vstack([case.socmi.reshape(-1, T), zeros]),
    }
    for key in SCHEDULES:
        changes[key] = np.vstack([getattr(case, key).reshape(-1, T), ones])
    return replace(case, **changes)


def with_horizon(case, T, dt=1.0, profile="diurnal", start_hour=None):
    """
    Rebuild PD/QD over a new horizon from the case's base bus loads.

    :param case: Case without storage, or with storage over the same T
    :param T: Number of steps
    :param dt: Step length (hours)
    :param profile: Passed to load_profiles
    :return: New Case
    """
    if case.n_storage and case.T != T:
        raise CaseValidationError(
            f"storage schedules cover T={case.T}, not {T}", matrix="batt"
        )
    pd, qd = load_profiles(case.bus[:, PD], case.bus[:, QD], T, profile, dt, start_hour)
    changes = {
        "pd": pd,
        "qd": qd,
        "dt": float(dt),
        "avg": np.ones((case.n_gen, T), dtype=np.int8),
        "price": np.ones(T),
    }
    if not case.n_storage:
        empty = np.zeros((0, T))
        changes.update(
            soci=empty, socmi=empty,
            **{key: empty.astype(np.int8) for key in SCHEDULES},
        )
    return replace(case, **changes)


def build_scenario(case, T, n_y, strategy="first-last", dt=1.0, profile="diurnal"):
    """
    Horizon plus stationary storage placed by a distribution strategy.

    :return: New Case
    """
    scenario = with_horizon(case, T, dt, profile)
    if n_y:
        scenario = attach_storage(scenario, distribute_storage(scenario, n_y, strategy))
    return scenario


def merge_fragment(case, fragment):
    """
    Append the devices of an EV fragment to a case.

    :param case: Case
    :param fragment: Dict as produced by EvFleet.to_fragment or its JSON text
    :return: New validated Case
    """
    if isinstance(fragment, (str, bytes)):
        fragment = json.loads(fragment)
    T = case.T
    if int(fragment.get("T", T)) != T:
        raise CaseValidationError(
            f"fragment covers T={fragment.get('T')}, case has T={T}", matrix="fragment"
        )
    batt = _table(fragment, "batt", BATT_COLUMNS, required=False)
    n_new = batt.shape[0]
    changes = {"batt": np.vstack([case.batt.reshape(-1, BATT_COLUMNS), batt.reshape(-1, BATT_COLUMNS)])}
    for key in SCHEDULES:
        changes[key] = np.vstack(
            [getattr(case, key).reshape(-1, T), _bit_rows(fragment, key, n_new, T)]
        )
    for key in ("soci", "socmi"):
        changes[key] = np.vstack(
            [getattr(case, key).reshape(-1, T), _triplets(fragment, key, n_new, T)]
        )
    return replace(case, **changes)


# =============================================================================
# Synthetic meshed cases
# =============================================================================


def synthetic_case(n_bus, n_gen=None, seed=0, name=None):
    """
    Deterministic meshed transmission case of arbitrary size.

    A ring with seeded chords keeps every bus on two or more paths; short
    lines, generous reactive limits and unlimited line ratings keep the
    single-period OPF comfortably feasible over the diurnal load range.

    :param n_bus: Number of buses (>= 3)
    :param n_gen: Number of generators, default about one per two buses
    :param seed: RNG seed
    :param name: Case name, default ``synthetic<n_bus>``
    :return: Case with T=1 and no storage
    """
    if n_bus < 3:
        raise ValueError("A synthetic case needs at least 3 buses")
    rng = np.random.default_rng(seed)
    n_gen = n_gen or max(1, (n_bus + 1) // 2)
    n_gen = min(n_gen, n_bus)

    bus = np.zeros((n_bus, 13))
    bus[:, BUS_I] = np.arange(1, n_bus + 1)
    bus[:, BUS_TYPE] = PQ
    loaded = rng.random(n_bus) < 0.7
    bus[:, PD] = np.where(loaded, rng.uniform(5.0, 20.0, n_bus), 0.0)
    bus[:, QD] = 0.3 * bus[:, PD]
    bus[:, BUS_AREA] = 1
    bus[:, VM] = 1.0
    bus[:, BASE_KV] = 230.0
    bus[:, ZONE] = 1
    bus[:, VMAX] = 1.06
    bus[:, VMIN] = 0.94

    edges = [(k, (k + 1) % n_bus) for k in range(n_bus)]
    seen = {tuple(sorted(e)) for e in edges}
    for _ in range(max(1, n_bus // 3)):
        a = int(rng.integers(n_bus))
        b = int((a + rng.integers(2, max(3, n_bus // 2))) % n_bus)
        key = tuple(sorted((a, b)))
        if a != b and key not in seen:
            seen.add(key)
            edges.append((a, b))
    branch = np.zeros((len(edges), 13))
    for row, (a, b) in enumerate(edges):
        x = rng.uniform(0.02, 0.06)
        branch[row, [F_BUS, T_BUS]] = (a + 1, b + 1)
        branch[row, BR_R] = x / 4.0
        branch[row, BR_X] = x
        branch[row, BR_B] = 0.02
        branch[row, BR_STATUS] = 1
        branch[row, ANGMIN] = -360
        branch[row, ANGMAX] = 360

    gen_buses = np.unique(np.linspace(0, n_bus - 1, n_gen).round().astype(int))
    n_gen = gen_buses.size
    total = bus[:, PD].sum()
    gen = np.zeros((n_gen, 10))
    gen[:, GEN_BUS] = gen_buses + 1
    gen[:, PMAX] = np.maximum(2.5 * total / n_gen, 50.0)
    gen[:, PMIN] = 0.0
    gen[:, QMAX] = gen[:, PMAX]
    gen[:, QMIN] = -gen[:, PMAX]
    gen[:, VG] = 1.0
    gen[:, MBASE] = 100.0
    gen[:, GEN_STATUS] = 1
    bus[gen_buses, BUS_TYPE] = PV
    bus[gen_buses[0], BUS_TYPE] = REF

    gencost = np.zeros((n_gen, 7))
    gencost[:, MODEL] = POLYNOMIAL
    gencost[:, NCOST] = 3
    gencost[:, COST] = rng.uniform(0.01, 0.05, n_gen)
    gencost[:, COST + 1] = rng.uniform(10.0, 40.0, n_gen)
    gencost[:, COST + 2] = 0.0

    document = {
        "name": name or f"synthetic{n_bus}",
        "baseMVA": 100.0,
        "bus": bus.tolist(),
        "branch": branch.tolist(),
        "gen": gen.tolist(),
        "gencost": gencost.tolist(),
    }
    return parse_case(document)
