"""
Logging setup for the dualseq package
"""

import logging

from rich.logging import RichHandler

PACKAGE_LOGGER = "dualseq"


def configure_logging(level: str = "INFO") -> logging.Logger:
    """
    Attach a rich handler to the package logger (idempotent)

    Args:
        level: Standard logging level name

    Returns:
        The package logger
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    logger.setLevel(level.upper())
    if not any(isinstance(h, RichHandler) for h in logger.handlers):
        handler = RichHandler(show_path=False, rich_tracebacks=True, markup=False)
        handler.setFormatter(logging.Formatter("%(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.propagate = False
    return logger
