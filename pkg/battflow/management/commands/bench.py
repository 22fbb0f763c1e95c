"""
Run a benchmark sweep and write the CSV and SVG set.

Usage:
    battflow bench --case case9 --T 24 48 --ny 0 3 10
    battflow bench --case synthetic118 --T 96 --ny 10 50 --strategy first-last fair-dist --fd-check
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import os

from django.core.management.base import BaseCommand, CommandError

from battflow import bench, case_io
from battflow.exceptions import BattflowError
from battflow.kkt import BACKENDS
from battflow.logger import set_verbosity


class Command(BaseCommand):
    help = "Benchmark the Schur-complement and direct LU KKT backends"

    def add_arguments(self, parser):
        parser.add_argument(
            "--case",
            nargs="+",
            required=True,
            help="Case files, bundled case names or synthetic<N>",
        )
        parser.add_argument("--T", dest="T", type=int, nargs="+", default=[24])
        parser.add_argument("--ny", type=int, nargs="+", default=[0])
        parser.add_argument(
            "--backend", nargs="+", choices=BACKENDS, default=list(BACKENDS)
        )
        parser.add_argument(
            "--strategy",
            nargs="+",
            choices=case_io.STRATEGIES,
            default=["first-last"],
        )
        parser.add_argument("--repeats", type=int, default=1)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument("--dt", default="1h", help="Step length (default: 1h)")
        parser.add_argument("--max-iter", type=int, default=150)
        parser.add_argument(
            "--out", default="bench-out", help="Output directory (default: bench-out)"
        )
        parser.add_argument(
            "--fd-check",
            action="store_true",
            help="Also time analytical derivatives against finite differences",
        )
        parser.add_argument(
            "--parallel-cells",
            type=int,
            default=1,
            help="Worker processes; whole cells run in parallel, never one solve",
        )
        parser.add_argument(
            "--no-plots", action="store_true", help="Skip the SVG figures"
        )

    def handle(self, *args, **options):
        set_verbosity(options["verbosity"])
        try:
            config = bench.BenchConfig(
                cases=options["case"],
                T=options["T"],
                n_y=options["ny"],
                backends=options["backend"],
                strategies=options["strategy"],
                repeats=options["repeats"],
                seed=options["seed"],
                out=options["out"],
                dt=case_io.parse_duration(options["dt"]),
                max_iter=options["max_iter"],
                fd_check=options["fd_check"],
                parallel_cells=options["parallel_cells"],
            )
        except ValueError as err:
            raise CommandError(str(err), returncode=2)

        for spec in config.cases:
            try:
                bench.resolve_case(spec, config.seed)
            except FileNotFoundError:
                raise CommandError(f"case not found: {spec}", returncode=2)

        try:
            frame = bench.run_bench(config)
            derivatives = bench.derivatives_frame(config) if config.fd_check else None
        except (BattflowError, ValueError) as err:
            raise CommandError(str(err))

        paths = bench.write_reports(frame, config.out, derivatives)
        for name, path in sorted(paths.items()):
            self.stdout.write(f"Wrote {name}: {path}")

        if not options["no_plots"]:
            from battflow.plots import memory_plot, time_curves

            for path in time_curves(frame, config.out):
                self.stdout.write(f"Wrote figure: {path}")
            path = memory_plot(frame, os.path.join(config.out, "memory.svg"))
            self.stdout.write(f"Wrote figure: {path}")

        failed = int((~frame["converged"]).sum())
        if failed:
            self.stdout.write(
                self.style.WARNING(f"{failed} of {len(frame)} cells did not converge")
            )
        self.stdout.write(self.style.SUCCESS(f"Benchmarked {len(frame)} cells"))
