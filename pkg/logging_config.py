# logging_config.py

import logging

import coloredlogs

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"


def setup_logging(level: str = "INFO") -> None:
    """
    Install the colored console handler on the root logger.

    Args:
        level: Name of the minimum level to emit (DEBUG, INFO, ...)
    """
    coloredlogs.install(level=level.upper(), fmt=LOG_FORMAT, logger=logging.getLogger())
