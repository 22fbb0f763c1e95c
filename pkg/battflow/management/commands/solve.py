"""
Solve one multi-period OPF case and write the solution report.

Usage:
    battflow solve --case case9.battcase.json --T 24 --ny 3 --backend schur
    battflow solve --case grid.battcase.json --fragment evs.json --out run.json --svg run.svg
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import json
import os

from django.core.management.base import BaseCommand, CommandError

from battflow import case_io, logic
from battflow.bench import resolve_case
from battflow.exceptions import BattflowError, ConvergenceError
from battflow.formulation import build_problem
from battflow.kkt import BACKENDS
from battflow.logger import get_logger, set_verbosity
from battflow.solver import SolverOptions, solve

logger = get_logger(__name__)


class Command(BaseCommand):
    help = "Solve a multi-period AC OPF case with storage"

    def add_arguments(self, parser):
        parser.add_argument(
            "--case",
            required=True,
            help="Case file, bundled case name or synthetic<N>",
        )
        parser.add_argument(
            "--T",
            dest="T",
            type=int,
            default=None,
            help="Rebuild the load series over T steps (default: keep the case's)",
        )
        parser.add_argument(
            "--ny",
            type=int,
            default=0,
            help="Number of stationary storage devices to attach (default: 0)",
        )
        parser.add_argument(
            "--strategy",
            choices=case_io.STRATEGIES,
            default="first-last",
            help="Storage distribution strategy (default: first-last)",
        )
        parser.add_argument(
            "--dt",
            default="1h",
            help="Step length when --T is given, e.g. 15min or 1h (default: 1h)",
        )
        parser.add_argument(
            "--fragment",
            default=None,
            help="EV fragment produced by 'battflow evgen' to merge into the case",
        )
        parser.add_argument(
            "--backend",
            choices=BACKENDS,
            default="schur",
            help="KKT backend (default: schur)",
        )
        parser.add_argument(
            "--max-iter",
            type=int,
            default=150,
            help="Interior point iteration limit (default: 150)",
        )
        parser.add_argument(
            "--seed",
            type=int,
            default=0,
            help="Seed of synthetic cases (default: 0)",
        )
        parser.add_argument(
            "--out",
            default=None,
            help="Solution JSON path (default: <case>.solution.json)",
        )
        parser.add_argument(
            "--svg",
            default=None,
            help="Also write load, generation and SOC profiles to this SVG",
        )

    def handle(self, *args, **options):
        set_verbosity(options["verbosity"])
        case = self._load(options)
        try:
            problem = build_problem(case)
        except BattflowError as err:
            raise CommandError(str(err))
        solver_options = SolverOptions(
            backend=options["backend"], max_iter=options["max_iter"]
        )

        failure = None
        try:
            solution = solve(problem, solver_options)
        except ConvergenceError as err:
            failure = err
            solution = err.solution
        except BattflowError as err:
            logger.debug("Solve failed", exc_info=True)
            raise CommandError(f"{type(err).__name__}: {err}")

        report = logic.build_solution_report(problem, solution)
        out = options["out"] or f"{case.name}.solution.json"
        with open(out, "w", encoding="utf-8") as handle:
            json.dump(report, handle, indent=2)
        self.stdout.write(f"Wrote solution report: {out}")

        if options["svg"]:
            from battflow.plots import solution_profiles

            solution_profiles(problem, solution, options["svg"])
            self.stdout.write(f"Wrote profiles: {options['svg']}")

        if failure is not None:
            raise CommandError(str(failure), returncode=1)
        self.stdout.write(
            self.style.SUCCESS(
                f"Converged in {solution.iterations} iterations, "
                f"objective {solution.objective:.6f}"
            )
        )

    def _load(self, options):
        try:
            case = resolve_case(options["case"], options["seed"])
        except FileNotFoundError:
            raise CommandError(f"case not found: {options['case']}", returncode=2)
        try:
            dt = case_io.parse_duration(options["dt"])
        except ValueError as err:
            raise CommandError(str(err), returncode=2)
        try:
            if options["T"] is not None:
                case = case_io.with_horizon(case, options["T"], dt)
            if options["fragment"]:
                case = case_io.merge_fragment(case, self._read(options["fragment"]))
            if options["ny"]:
                buses = case_io.distribute_storage(
                    case, options["ny"], options["strategy"]
                )
                case = case_io.attach_storage(case, buses)
        except (BattflowError, ValueError) as err:
            raise CommandError(str(err))
        logger.info(
            "Solving %s: n_b=%s n_y=%s T=%s", case.name, case.n_bus, case.n_storage, case.T
        )
        return case

    def _read(self, path):
        if not os.path.isfile(path):
            raise CommandError(f"fragment not found: {path}", returncode=2)
        with open(path, "r", encoding="utf-8") as handle:
            return handle.read()
