"""
Electrical network model: admittances, injections, flows and the time-indexed
connectivity of generators and storage devices.

All quantities are per unit on the case's baseMVA.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from battflow import case_io as ci
from battflow.exceptions import LayoutError, NetworkError
from battflow.logger import get_logger

logger = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class Admittances:
    """Bus and branch admittance matrices with the branch incidence matrices."""

    ybus: sp.csc_matrix
    yf: sp.csc_matrix
    yt: sp.csc_matrix
    cf: sp.csc_matrix
    ct: sp.csc_matrix
    yshunt: sp.csc_matrix
    branches: np.ndarray
    f_bus: np.ndarray
    t_bus: np.ndarray

    @property
    def n_bus(self):
        return int(self.ybus.shape[0])

    @property
    def n_line(self):
        return int(self.yf.shape[0])


@dataclass(frozen=True, eq=False)
class Connectivity3D:
    """Per-step incidence of generators and storage devices on buses."""

    cg: list
    cch: list
    cdch: list
    cs: list

    @property
    def T(self):
        return len(self.cg)


def build_admittances(case):
    """
    Build the pi-model admittance matrices of the in-service branches.

    :param case: Case
    :return: Admittances
    """
    n_b = case.n_bus
    index = case.bus_index()
    in_service = np.flatnonzero(case.branch[:, ci.BR_STATUS] != 0)
    branch = case.branch[in_service]
    n_l = branch.shape[0]

    impedance = branch[:, ci.BR_R] + 1j * branch[:, ci.BR_X]
    zero = np.flatnonzero(impedance == 0)
    if zero.size:
        raise NetworkError(
            f"Branch {int(in_service[zero[0]])} has zero impedance"
        )
    ys = 1.0 / impedance
    bc = branch[:, ci.BR_B]
    tap = np.ones(n_l, dtype=complex)
    ratio = branch[:, ci.TAP]
    tap[ratio != 0] = ratio[ratio != 0]
    tap = tap * np.exp(1j * np.pi / 180.0 * branch[:, ci.SHIFT])

    ytt = ys + 1j * bc / 2.0
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap

    f = np.array([index[int(b)] for b in branch[:, ci.F_BUS]], dtype=int)
    t = np.array([index[int(b)] for b in branch[:, ci.T_BUS]], dtype=int)
    lines = np.arange(n_l)
    cf = sp.csc_matrix((np.ones(n_l), (lines, f)), shape=(n_l, n_b))
    ct = sp.csc_matrix((np.ones(n_l), (lines, t)), shape=(n_l, n_b))
    yf = sp.csc_matrix(
        (np.r_[yff, yft], (np.r_[lines, lines], np.r_[f, t])), shape=(n_l, n_b)
    )
    yt = sp.csc_matrix(
        (np.r_[ytf, ytt], (np.r_[lines, lines], np.r_[f, t])), shape=(n_l, n_b)
    )
    shunt = (case.bus[:, ci.GS] + 1j * case.bus[:, ci.BS]) / case.base_mva
    yshunt = sp.diags(shunt, format="csc")
    ybus = sp.csc_matrix(cf.T @ yf + ct.T @ yt + yshunt)

    logger.debug("Built admittances for %s buses and %s lines", n_b, n_l)
    return Admittances(
        ybus=ybus, yf=yf, yt=yt, cf=cf, ct=ct, yshunt=sp.csc_matrix(yshunt),
        branches=in_service, f_bus=f, t_bus=t,
    )


def _check_voltage(adm, v):
    v = np.asarray(v, dtype=complex)
    if v.shape != (adm.n_bus,):
        raise LayoutError(f"Voltage vector has shape {v.shape}, expected ({adm.n_bus},)")
    return v


def bus_injections(adm, v):
    """
    Complex power injected into every bus.

    :param adm: Admittances
    :param v: Complex bus voltages
    :return: S = V * conj(Ybus V)
    """
    v = _check_voltage(adm, v)
    return v * np.conj(adm.ybus @ v)


def line_flows(adm, v):
    """
    Complex power entering each in-service line at its two terminals.

    :param adm: Admittances
    :param v: Complex bus voltages
    :return: Tuple (S_from, S_to)
    """
    v = _check_voltage(adm, v)
    s_from = (adm.cf @ v) * np.conj(adm.yf @ v)
    s_to = (adm.ct @ v) * np.conj(adm.yt @ v)
    return s_from, s_to


def _incidence(bus_rows, active, n_b):
    columns = np.flatnonzero(active)
    return sp.csc_matrix(
        (np.ones(columns.size), (bus_rows[columns], columns)),
        shape=(n_b, active.size),
    )


def build_connectivity3d(case):
    """
    Per-step connectivity of generators and storage.

    :param case: Case
    :return: Connectivity3D
    """
    n_b = case.n_bus
    index = case.bus_index()
    gen_rows = np.array([index[int(b)] for b in case.gen[:, ci.GEN_BUS]], dtype=int)
    batt_rows = np.array(
        [index[int(b)] for b in case.batt[:, ci.BATT_BUS]], dtype=int
    )
    in_service = case.gen[:, ci.GEN_STATUS] > 0
    avbp = case.avbp == 1
    cg, cch, cdch, cs = [], [], [], []
    for t in range(case.T):
        cg.append(_incidence(gen_rows, in_service & (case.avg[:, t] == 1), n_b))
        cch.append(_incidence(batt_rows, avbp[:, t] & (case.conch[:, t] == 1), n_b))
        cdch.append(_incidence(batt_rows, avbp[:, t] & (case.condi[:, t] == 1), n_b))
        cs.append(_incidence(batt_rows, avbp[:, t] & (case.avbq[:, t] == 1), n_b))
    return Connectivity3D(cg=cg, cch=cch, cdch=cdch, cs=cs)
