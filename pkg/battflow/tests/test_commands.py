"""
Tests for the battflow command line.
"""

import io
import json
import logging
import os
import tempfile
from unittest import mock

import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from battflow import case_io, plugin_settings
from battflow.__main__ import THREAD_VARIABLES, export_threads, main
from battflow.exceptions import SingularMatrixError
from battflow.tests.base import BattflowTestCase


class CommandTestCase(BattflowTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def path(self, name):
        return os.path.join(self.tmp.name, name)

    def call(self, name, *flags):
        """Run a command; return (stdout, stderr)."""
        stdout, stderr = io.StringIO(), io.StringIO()
        call_command(name, *flags, stdout=stdout, stderr=stderr)
        return stdout.getvalue(), stderr.getvalue()

    def call_failing(self, name, *flags):
        """Run a command expected to fail; return its CommandError."""
        with self.assertRaises(CommandError) as ctx:
            self.call(name, *flags)
        return ctx.exception

    def write_case(self, case, name="grid.battcase.json"):
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(case_io.serialize_case(case))
        return path


class TestDispatch(CommandTestCase):
    def run_main(self, *argv):
        """Run the console entry point; return (exit code, stdout, stderr)."""
        with mock.patch.dict("os.environ"), \
                mock.patch("sys.stdout", new_callable=io.StringIO) as stdout, \
                mock.patch("sys.stderr", new_callable=io.StringIO) as stderr:
            try:
                code = main(["battflow", *argv])
            except SystemExit as exit_:
                code = exit_.code
        return code, stdout.getvalue(), stderr.getvalue()

    def test_help(self):
        """The help listing names every battflow command."""
        code, stdout, _ = self.run_main("help")
        self.assertEqual(code, 0)
        self.assertIn("[battflow]", stdout)
        for name in ("solve", "bench", "evgen", "validate"):
            self.assertIn(name, stdout)

    def test_version(self):
        """--version prints the package version."""
        code, stdout, _ = self.run_main("--version")
        self.assertEqual(code, 0)
        self.assertEqual(stdout.strip(), plugin_settings.VERSION)

    def test_unknown_command(self):
        """Unknown commands are reported and exit non-zero."""
        code, _, stderr = self.run_main("nosuch")
        self.assertEqual(code, 1)
        self.assertIn("Unknown command", stderr)

    def test_command_error_sets_exit_code(self):
        """A CommandError from a command becomes the process exit code."""
        code, _, stderr = self.run_main("solve", "--case", self.path("missing.json"))
        self.assertEqual(code, 2)
        self.assertIn("case not found", stderr)

    def test_export_threads(self):
        """BATTFLOW_THREADS is copied into every BLAS variable."""
        environ = {"BATTFLOW_THREADS": "3"}
        self.assertEqual(export_threads(environ), "3")
        for name in THREAD_VARIABLES:
            self.assertEqual(environ[name], "3")
        environ = {}
        export_threads(environ)
        self.assertEqual(environ["OMP_NUM_THREADS"], "1")


class TestSolveCommand(CommandTestCase):
    def test_missing_case(self):
        """A missing case file exits with 2."""
        err = self.call_failing("solve", "--case", self.path("missing.json"))
        self.assertEqual(err.returncode, 2)
        self.assertIn("case not found", str(err))

    def test_bad_duration(self):
        """Unparseable step lengths exit with 2."""
        err = self.call_failing("solve", "--case", "case9", "--T", "2", "--dt", "soon")
        self.assertEqual(err.returncode, 2)

    def test_solve_case9(self):
        """case9 solves and its report is written."""
        out = self.path("case9.json")
        svg = self.path("case9.svg")
        stdout, _ = self.call(
            "solve", "--case", "case9", "--T", "2", "--ny", "1", "--out", out, "--svg", svg
        )
        self.assertIn("Converged", stdout)
        with open(out, "r", encoding="utf-8") as handle:
            report = json.load(handle)
        self.assertTrue(report["converged"])
        self.assertTrue(os.path.isfile(svg))

    def test_iteration_limit(self):
        """Hitting the iteration limit still writes the report and exits with 1."""
        out = self.path("partial.json")
        err = self.call_failing("solve", "--case", "case9", "--max-iter", "2", "--out", out)
        self.assertEqual(err.returncode, 1)
        self.assertTrue(os.path.isfile(out))

    def test_numerical_failure(self):
        """A singular KKT system is reported as a command failure, not a traceback."""
        singular = mock.Mock(side_effect=SingularMatrixError("Schur complement is singular"))
        with mock.patch("battflow.management.commands.solve.solve", singular):
            err = self.call_failing("solve", "--case", "case9", "--out", self.path("x.json"))
        self.assertEqual(err.returncode, 1)
        self.assertIn("SingularMatrixError", str(err))

    def test_verbosity_sets_log_level(self):
        """--verbosity 3 turns on debug logging for the run."""
        root = logging.getLogger("battflow")
        previous = root.level
        self.addCleanup(root.setLevel, previous)
        self.call("validate", "--case", "case9", "--verbosity", "3")
        self.assertEqual(root.level, logging.DEBUG)


class TestEvgenCommand(CommandTestCase):
    def test_deterministic(self):
        """The same seed writes identical fragments."""
        first, second = self.path("a.json"), self.path("b.json")
        for out in (first, second):
            self.call("evgen", "--n-ev", "4", "--dt", "15min", "--seed", "7", "--out", out)
        with open(first, "rb") as a, open(second, "rb") as b:
            self.assertEqual(a.read(), b.read())
        with open(first, "r", encoding="utf-8") as handle:
            fragment = json.load(handle)
        self.assertEqual(fragment["T"], 96)
        self.assertEqual(len(fragment["batt"]), 4)

    def test_config_file(self):
        """Parameters can come from a JSON file."""
        config = self.path("fleet.json")
        with open(config, "w", encoding="utf-8") as handle:
            json.dump({"n_ev": 2, "T": 24, "dt": 1.0, "seed": 3}, handle)
        out = self.path("evs.json")
        stdout, _ = self.call("evgen", "--ev-config", config, "--out", out)
        self.assertIn("T=24", stdout)

    def test_invalid_parameters(self):
        """Unknown or invalid parameters exit with 2."""
        config = self.path("fleet.json")
        with open(config, "w", encoding="utf-8") as handle:
            json.dump({"n_cars": 2}, handle)
        err = self.call_failing("evgen", "--ev-config", config, "--out", self.path("x.json"))
        self.assertEqual(err.returncode, 2)
        self.assertIn("Unknown EV parameters", str(err))
        err = self.call_failing("evgen", "--ev-config", self.path("nope.json"))
        self.assertEqual(err.returncode, 2)


class TestValidateCommand(CommandTestCase):
    def test_summary(self):
        """The summary reports dimensions of the bundled case."""
        stdout, _ = self.call("validate", "--case", "case9")
        summary = json.loads(stdout)
        self.assertEqual(summary["n_bus"], 9)
        self.assertEqual(summary["n_storage"], 0)
        self.assertTrue(summary["stationary"])

    def test_merge_fragment(self):
        """A generated fleet merges into a case over the same window."""
        grid = self.write_case(case_io.with_horizon(self.case9, 96, 0.25))
        fragment = self.path("evs.json")
        self.call("evgen", "--n-ev", "3", "--seed", "1", "--out", fragment)
        merged = self.path("merged.battcase.json")
        stdout, _ = self.call(
            "validate", "--case", grid, "--fragment", fragment, "--out", merged
        )
        summary = json.loads(stdout)
        self.assertEqual(summary["n_storage"], 3)
        self.assertFalse(summary["stationary"])
        self.assertEqual(case_io.load_case(merged).n_storage, 3)

    def test_horizon_mismatch(self):
        """A fragment over another horizon is rejected."""
        fragment = self.path("evs.json")
        self.call("evgen", "--n-ev", "2", "--out", fragment)
        err = self.call_failing("validate", "--case", "case9", "--fragment", fragment)
        self.assertEqual(err.returncode, 1)
        self.assertIn("T=", str(err))


class TestBenchCommand(CommandTestCase):
    def test_missing_case(self):
        """Missing cases exit with 2 before any solve."""
        err = self.call_failing("bench", "--case", "nope", "--out", self.path("out"))
        self.assertEqual(err.returncode, 2)
        self.assertIn("case not found", str(err))

    def test_invalid_sweep(self):
        """Invalid sweep values exit with 2."""
        err = self.call_failing("bench", "--case", "case9", "--repeats", "0")
        self.assertEqual(err.returncode, 2)

    @pytest.mark.slow
    def test_small_sweep(self):
        """A small sweep writes the CSV and SVG set."""
        out = self.path("out")
        stdout, _ = self.call(
            "bench", "--case", "case9", "--T", "2", "--ny", "0", "1",
            "--fd-check", "--out", out,
        )
        self.assertIn("Benchmarked 4 cells", stdout)
        for name in (
            "results.csv", "memory.csv", "crossover.csv", "strategies.csv", "derivatives.csv",
            "time_case9.svg", "memory.svg",
        ):
            self.assertTrue(os.path.isfile(os.path.join(out, name)), name)
