"""
Package logger.

All diagnostics go to stderr with a ``[yoro]`` prefix so that stdout stays
free for the JSON documents printed by the command line.
"""

import logging
import os
import sys

_LOGGER_NAME = "yoro"


def get_logger(name: str = "") -> logging.Logger:
    """Return the package logger, or a child of it when *name* is given."""
    logger = logging.getLogger(_LOGGER_NAME)
    if not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("[yoro] %(levelname)s: %(message)s"))
        logger.addHandler(handler)
        logger.propagate = False
        debug = os.environ.get("YORO_DEBUG", "0") not in ("", "0", "false", "False")
        logger.setLevel(logging.DEBUG if debug else logging.INFO)
    if name:
        return logger.getChild(name)
    return logger


def set_debug(debug: bool) -> None:
    """Switch the package logger between DEBUG and INFO."""
    get_logger().setLevel(logging.DEBUG if debug else logging.INFO)
