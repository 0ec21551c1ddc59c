"""Performance monitoring decorators for memlab.

Wraps probes and experiment drivers with timing, optional resident-memory
tracking (psutil) and slow-operation warnings.
"""

import functools
import time
from typing import Any, Callable, Dict, Optional, TypeVar

import psutil

from ..core.logging import get_logger, log_performance

F = TypeVar("F", bound=Callable[..., Any])


def _rss_mb() -> float:
    return psutil.Process().memory_info().rss / 1024 / 1024


def monitor_performance(
    operation_name: str = None,
    include_args: bool = False,
    track_memory: bool = False,
    slow_threshold_seconds: float = 1.0,
) -> Callable[[F], F]:
    """
    Decorator to monitor function performance.

    Args:
        operation_name: Name for the operation (uses function name if None)
        include_args: Whether to include function arguments in logs
        track_memory: Whether to track memory usage
        slow_threshold_seconds: Threshold for logging slow operations

    Returns:
        Decorated function with performance monitoring
    """
    def decorator(func: F) -> F:
        logger = get_logger(func.__module__)
        op_name = operation_name or f"{func.__module__}.{func.__name__}"

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            memory_before: Optional[float] = _rss_mb() if track_memory else None

            log_data: Dict[str, Any] = {"operation": op_name}
            if include_args and args:
                log_data["args_count"] = len(args)
            if include_args and kwargs:
                log_data["kwargs_keys"] = sorted(kwargs)
            logger.debug("Performance monitoring started", **log_data)

            try:
                result = func(*args, **kwargs)
            except Exception as exc:
                duration = time.perf_counter() - start_time
                logger.error(
                    f"Operation failed: {op_name}",
                    duration_seconds=duration,
                    error_type=type(exc).__name__,
                    error_message=str(exc),
                )
                log_performance(op_name, duration, success=False, error_type=type(exc).__name__)
                raise

            duration = time.perf_counter() - start_time
            performance_data: Dict[str, Any] = {"success": True}
            if memory_before is not None:
                memory_after = _rss_mb()
                performance_data.update(
                    memory_before_mb=memory_before,
                    memory_after_mb=memory_after,
                    memory_delta_mb=memory_after - memory_before,
                )

            log_performance(op_name, duration, **performance_data)
            if duration > slow_threshold_seconds:
                logger.warning(
                    f"Slow operation detected: {op_name}",
                    duration_seconds=duration,
                    **performance_data,
                )
            else:
                logger.debug(
                    f"Operation completed: {op_name}",
                    duration_seconds=duration,
                    **performance_data,
                )
            return result

        return wrapper  # type: ignore[return-value]

    return decorator
