import logging
from collections.abc import Callable, Iterable, Sequence
from concurrent.futures import ProcessPoolExecutor
from typing import TypeVar

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(fn: Callable[[T], R], items: Iterable[T], jobs: int = 1) -> list[R]:
    """Apply ``fn`` to every item, returning results in input order.

    With ``jobs > 1`` the work is spread over a process pool; ``fn`` and the
    items must be picklable. Output never depends on ``jobs``.
    """
    work: Sequence[T] = list(items)
    if jobs <= 1 or len(work) <= 1:
        return [fn(item) for item in work]

    workers = min(jobs, len(work))
    try:
        with ProcessPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(fn, work))
    except (PermissionError, OSError) as exc:
        log.warning(f"Parallel execution unavailable ({exc}); falling back to a single worker.")
        return [fn(item) for item in work]
