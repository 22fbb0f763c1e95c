"""
Generate EV availability schedules as a mergeable case fragment.

Usage:
    battflow evgen --ev-config fleet.json --dt 15min --seed 7 --out evs.json
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import json
import os

from django.core.management.base import BaseCommand, CommandError

from battflow import case_io
from battflow.logger import set_verbosity


class Command(BaseCommand):
    help = "Generate EV charging schedules (12:00 to 12:00 window)"

    def add_arguments(self, parser):
        parser.add_argument(
            "--ev-config",
            default=None,
            help="JSON file with EV generator parameters (default: built-in)",
        )
        parser.add_argument("--n-ev", type=int, default=None, help="Number of EVs")
        parser.add_argument(
            "--dt",
            default=None,
            help="Step length such as 15min; sets T to one day of steps",
        )
        parser.add_argument("--seed", type=int, default=None)
        parser.add_argument(
            "--out", default="ev_fragment.json", help="Fragment path"
        )

    def handle(self, *args, **options):
        set_verbosity(options["verbosity"])
        data = self._read_config(options["ev_config"])
        try:
            if options["dt"] is not None:
                dt = case_io.parse_duration(options["dt"])
                data["dt"] = dt
                data["T"] = case_io.steps_per_day(dt)
            if options["seed"] is not None:
                data["seed"] = options["seed"]
            if options["n_ev"] is not None:
                data["n_ev"] = options["n_ev"]
            params = case_io.EvGenParams.from_dict(data)
            fleet = case_io.generate_ev_schedules(params)
        except (TypeError, ValueError) as err:
            raise CommandError(f"Invalid EV parameters: {err}", returncode=2)

        with open(options["out"], "w", encoding="utf-8") as handle:
            json.dump(fleet.to_fragment(), handle, sort_keys=True)
        self.stdout.write(
            self.style.SUCCESS(
                f"Wrote {params.n_ev} EVs over T={params.T} steps to {options['out']}"
            )
        )

    def _read_config(self, path):
        if path is None:
            return {}
        if not os.path.isfile(path):
            raise CommandError(f"EV config not found: {path}", returncode=2)
        with open(path, "r", encoding="utf-8") as handle:
            try:
                data = json.load(handle)
            except json.JSONDecodeError as err:
                raise CommandError(f"Invalid EV config {path}: {err}", returncode=2)
        if not isinstance(data, dict):
            raise CommandError("EV config must be a JSON object", returncode=2)
        return data
