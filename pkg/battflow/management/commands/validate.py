"""
Parse and validate a case, optionally after merging an EV fragment.

Usage:
    battflow validate --case grid.battcase.json --fragment evs.json
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import json
import os

from django.core.management.base import BaseCommand, CommandError

from battflow import case_io, logic
from battflow.bench import resolve_case
from battflow.exceptions import BattflowError
from battflow.formulation import build_problem
from battflow.logger import set_verbosity


class Command(BaseCommand):
    help = "Validate a case document and print its summary"

    def add_arguments(self, parser):
        parser.add_argument("--case", required=True)
        parser.add_argument("--fragment", default=None)
        parser.add_argument(
            "--out", default=None, help="Write the merged case to this path"
        )

    def handle(self, *args, **options):
        set_verbosity(options["verbosity"])
        try:
            case = resolve_case(options["case"])
        except FileNotFoundError:
            raise CommandError(f"case not found: {options['case']}", returncode=2)

        try:
            if options["fragment"]:
                if not os.path.isfile(options["fragment"]):
                    raise CommandError(
                        f"fragment not found: {options['fragment']}", returncode=2
                    )
                with open(options["fragment"], "r", encoding="utf-8") as handle:
                    case = case_io.merge_fragment(case, handle.read())
            build_problem(case)
        except (BattflowError, ValueError) as err:
            raise CommandError(str(err))

        if options["out"]:
            with open(options["out"], "w", encoding="utf-8") as handle:
                handle.write(case_io.serialize_case(case))
        self.stdout.write(
            json.dumps(logic.build_case_summary(case), indent=2, sort_keys=True)
        )
