"""
The package logger.

Set DMMIMO_LOGLEVEL (DEBUG, INFO, WARNING, ...) to change what is printed;
progress bars follow the INFO level.
"""

import logging
import os

import coloredlogs  # type: ignore

FIELD_STYLES = dict(
    levelname=dict(color="green"),
)


def setup_logger(name):
    """Return the named logger with coloredlogs installed on it."""
    logger = logging.getLogger(name)
    coloredlogs.install(
        level=os.environ.get("DMMIMO_LOGLEVEL", "INFO").upper(),
        fmt="%(levelname)s - %(message)s",
        logger=logger,
        field_styles=FIELD_STYLES,
    )
    return logger


def progress_disabled() -> bool:
    """tqdm bars are only shown when the logger would print INFO messages."""
    return not LOGGER.isEnabledFor(logging.INFO)


LOGGER = setup_logger("dmmimo")
