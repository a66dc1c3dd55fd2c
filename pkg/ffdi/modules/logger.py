"""
Shared logging helper for ffdi modules.
Keeps logging consistent and lightweight.
"""

import logging
import os

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"


def get_logger(name):
    return logging.getLogger(name)


def configure_logging(level=None):
    """
    Configure root logging once for an entry point (cli.py / app.py).
    Level falls back to FFDI_LOG_LEVEL, then INFO.
    """
    level = level or os.environ.get("FFDI_LOG_LEVEL", "INFO")
    if isinstance(level, str):
        level = getattr(logging, level.strip().upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT)
    logging.getLogger().setLevel(level)
