"""Ordered fan-out for independent probes and per-matrix work.

Results always come back in input order, so reductions that follow are
independent of the worker count.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from ..core.config import get_settings
from ..core.logging import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def worker_count(max_workers: Optional[int] = None) -> int:
    """Resolve the worker cap (explicit value, else ``MEMLAB_THREADS``)."""
    if max_workers is not None:
        return max(1, int(max_workers))
    return get_settings().threads


def parallel_map(
    fn: Callable[[T], R],
    items: Iterable[T],
    max_workers: Optional[int] = None,
) -> List[R]:
    """Apply ``fn`` to every item, preserving order.

    Args:
        fn: Pure function of one item
        items: Work items
        max_workers: Worker cap override

    Returns:
        Results in input order
    """
    work = list(items)
    workers = min(worker_count(max_workers), len(work)) if work else 1
    if workers <= 1:
        return [fn(item) for item in work]

    logger.debug("Dispatching work", items=len(work), workers=workers)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, work))
