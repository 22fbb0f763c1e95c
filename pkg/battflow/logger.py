"""
Logging helpers for battflow.

Every module calls ``get_logger(__name__)``; the first call attaches one
stream handler to the ``battflow`` root logger.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import logging
import os

ROOT_LOGGER = "battflow"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

VERBOSITY_LEVELS = {
    0: logging.ERROR,
    1: logging.WARNING,
    2: logging.INFO,
    3: logging.DEBUG,
}

_configured = False


def _configure_root():
    global _configured
    if _configured:
        return
    root = logging.getLogger(ROOT_LOGGER)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    level_name = os.environ.get("BATTFLOW_LOG_LEVEL", "WARNING").upper()
    root.setLevel(getattr(logging, level_name, logging.WARNING))
    _configured = True


def get_logger(name):
    """
    Return a logger below the ``battflow`` root.

    :param name: Usually ``__name__`` of the calling module
    :return: logging.Logger
    """
    _configure_root()
    if not name.startswith(ROOT_LOGGER):
        name = f"{ROOT_LOGGER}.{name}"
    return logging.getLogger(name)


def set_verbosity(verbosity):
    """
    Map a management-command verbosity (0-3) onto the root log level.

    Verbosity 1 is Django's default and keeps the configured level.

    :param verbosity: Integer 0..3
    """
    _configure_root()
    if int(verbosity) == 1:
        return
    level = VERBOSITY_LEVELS.get(int(verbosity), logging.DEBUG)
    logging.getLogger(ROOT_LOGGER).setLevel(level)
