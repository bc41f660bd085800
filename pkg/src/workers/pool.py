"""
Worker pool for per-view stages; results always come back in input order
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

from src.utils.logger import logger

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(func: Callable[[T], R], items: Iterable[T], workers: int = 1) -> List[R]:
    """Map func over items with up to `workers` threads, reduced in input order"""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    logger.debug("Dispatching to worker pool", extra={"workers": workers, "items": len(items)})
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="gsprop") as executor:
        # Executor.map yields in submission order regardless of completion order
        return list(executor.map(func, items))
