"""Logging utilities for memlab.

Context managers that bind structured context to log lines and time
long-running sections (sweeps, experiments, chunk passes).
"""

import time
from typing import Any, Dict, Optional

from ..core.logging import get_logger, log_performance


class LogContext:
    """Context manager for adding structured context to logs."""

    def __init__(self, logger_name: str = None, **context):
        """Initialize log context.

        Args:
            logger_name: Logger name
            **context: Context key-value pairs
        """
        self.logger = get_logger(logger_name)
        self.context = context
        self.bound_logger = None

    def __enter__(self):
        """Enter context and bind logger with context."""
        self.bound_logger = self.logger.bind(**self.context)
        return self.bound_logger

    def __exit__(self, exc_type, exc_val, exc_tb):
        """Exit context."""
        if exc_type:
            self.bound_logger.error(
                "Exception in log context",
                exception_type=exc_type.__name__,
                exception_message=str(exc_val),
                exc_info=True,
            )


class TimeOperation:
    """Times a block and reports it through ``log_performance``."""

    def __init__(self, operation_name: str, logger_name: str = None, **context: Any):
        self.logger = get_logger(logger_name)
        self.operation_name = operation_name
        self.context: Dict[str, Any] = context
        self.start_time: Optional[float] = None
        self.duration: Optional[float] = None

    def __enter__(self) -> "TimeOperation":
        self.start_time = time.perf_counter()
        self.logger.info(f"Starting {self.operation_name}", **self.context)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration = time.perf_counter() - self.start_time

        if exc_type:
            self.logger.error(
                f"{self.operation_name} failed",
                duration_seconds=self.duration,
                exception_type=exc_type.__name__,
                exception_message=str(exc_val),
                **self.context,
            )
        else:
            self.logger.info(
                f"{self.operation_name} completed",
                duration_seconds=self.duration,
                **self.context,
            )

        log_performance(self.operation_name, self.duration)


def time_operation(operation_name: str, logger_name: str = None, **context: Any) -> TimeOperation:
    """Context manager for timing operations.

    Args:
        operation_name: Name of the operation being timed
        logger_name: Logger name
        **context: Extra key-values attached to the start/end lines
    """
    return TimeOperation(operation_name, logger_name, **context)
