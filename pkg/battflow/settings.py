"""
Django settings for the ``battflow`` command line.

The CLI runs its commands through Django's management framework; no database,
templates or middleware are used. Solver settings declared in
``plugin_settings.SETTINGS`` can be fixed here as ``BATTFLOW_<NAME>``, which
takes precedence over the environment variable of the same name.
"""

__copyright__ = "Copyright 2026 battflow developers"
__author__ = "battflow developers"
__license__ = "AGPL v3"

import os

SECRET_KEY = os.environ.get("DJANGO_SECRET_KEY", "battflow-cli")

DEBUG = False

INSTALLED_APPS = ["battflow"]

DATABASES = {}

USE_TZ = True

TIME_ZONE = "UTC"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# battflow attaches its own handler to the "battflow" logger
LOGGING_CONFIG = None
