"""Console entry point: ``battflow <command>`` or ``python -m battflow``."""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import os
import sys

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
SETTINGS_MODULE = "battflow.settings"


def export_threads(environ=None):
    """Copy BATTFLOW_THREADS (default 1) into the BLAS/OpenMP variables."""
    environ = os.environ if environ is None else environ
    threads = environ.get("BATTFLOW_THREADS", "1").strip() or "1"
    for name in THREAD_VARIABLES:
        environ[name] = threads
    return threads


def main(argv=None):
    """
    Run ``battflow <command>`` through Django's management utility.

    :param argv: Full argument vector, program name first; defaults to sys.argv
    :return: 0; command failures leave through SystemExit
    """
    argv = list(sys.argv if argv is None else argv)
    argv[0] = "battflow"
    export_threads()
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", SETTINGS_MODULE)
    if argv[1:2] == ["--version"]:
        from battflow import plugin_settings

        sys.stdout.write(f"{plugin_settings.VERSION}\n")
        return 0
    # numpy reads the thread variables on first import
    from django.core.management import execute_from_command_line

    execute_from_command_line(argv)
    return 0


if __name__ == "__main__":
    sys.exit(main())
