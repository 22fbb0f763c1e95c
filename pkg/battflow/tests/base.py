"""
Base test case for battflow tests.

Provides common fixtures and setup for all test modules.
"""

import copy

import numpy as np
from django.test import SimpleTestCase

from battflow import case_io

# Charge-only schedule of five devices over ten steps; CONCH equals AVBP
DYNAMIC_SCHEDULE = (
    "0011111100",
    "0001111000",
    "0011110000",
    "0000111110",
    "0000111000",
)

TWO_BUS_DOCUMENT = {
    "name": "twobus",
    "baseMVA": 100.0,
    "bus": [
        [1, 3, 0, 0, 0, 0, 1, 1, 0, 230, 1, 1.1, 0.9],
        [2, 1, 50, 10, 0, 0, 1, 1, 0, 230, 1, 1.1, 0.9],
    ],
    "branch": [[1, 2, 0.01, 0.05, 0, 0, 0, 0, 0, 0, 1, -360, 360]],
    "gen": [[1, 0, 0, 100, -100, 1, 100, 1, 200, 0]],
    "gencost": [[2, 0, 0, 3, 0.01, 10, 0]],
}


def bits(rows):
    """Turn bitstrings into an int8 matrix."""
    return np.array([[int(b) for b in row] for row in rows], dtype=np.int8)


class BattflowTestCase(SimpleTestCase):
    """
    Base test case with common fixtures for battflow tests.

    Provides:
    - case9: the bundled nine-bus case (T=1, no storage)
    - two_bus_document(): fresh copy of a minimal two-bus document
    - scenario(): case9 over a horizon with stationary storage
    - dynamic_case(): case9 over ten steps with the charge-only EV schedule
    """

    @classmethod
    def setUpClass(cls):
        """Load shared cases once for the entire test class."""
        super().setUpClass()
        cls.case9 = case_io.load_bundled_case("case9")

    @staticmethod
    def two_bus_document(**changes):
        document = copy.deepcopy(TWO_BUS_DOCUMENT)
        document.update(changes)
        return document

    def scenario(self, T=3, n_y=0, strategy="first-last", profile="diurnal"):
        return case_io.build_scenario(self.case9, T, n_y, strategy, profile=profile)

    def dynamic_case(self):
        """Case9 over T=10 with five EVs plugged per DYNAMIC_SCHEDULE."""
        avbp = bits(DYNAMIC_SCHEDULE)
        n_y, T = avbp.shape
        case = case_io.with_horizon(self.case9, T, 1.0)
        case = case_io.attach_storage(case, [5, 7, 9, 5, 7], emax_mwh=1.0, pmax_mw=0.5)
        soci = np.zeros((n_y, T))
        soci[case_io.arrival_mask(avbp)] = 0.2
        return case_io.replace(
            case,
            avbp=avbp,
            conch=avbp.copy(),
            condi=np.zeros_like(avbp),
            avbq=np.zeros_like(avbp),
            soci=soci,
        )
