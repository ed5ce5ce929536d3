import logging
import os

logger = logging.getLogger(__name__)

THREADS_VARIABLE = "VALDNET_THREADS"


def data_workers() -> int:
    """Data-loading worker count: `VALDNET_THREADS` if set, else the CPU count"""
    value = os.environ.get(THREADS_VARIABLE)
    if value:
        try:
            return max(1, int(value))
        except ValueError:
            logger.warning("Ignoring %s=%r, it isn't an integer", THREADS_VARIABLE, value)
    return max(1, os.cpu_count() or 1)
