"""Shared task helpers."""
import contextlib
import logging
from typing import Callable, Iterator

from speedwagon import utils

PACKAGE_LOGGER = "speedwagon_clickgraph"


@contextlib.contextmanager
def package_logging(log: Callable[[str], None]) -> Iterator[None]:
    """Forward the package's log messages to a task log."""
    package_logger = logging.getLogger(PACKAGE_LOGGER)
    package_logger.setLevel(logging.INFO)
    with utils.log_config(package_logger, log):
        yield
