import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

from settings import settings

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def map_ordered(fn: Callable[[T], R], items: Iterable[T],
                workers: int | None = None) -> list[R]:
    """Applies ``fn`` over ``items`` on a bounded pool; results keep input order.

    ``workers`` defaults to ``settings.workers`` (env ``LRLENS_WORKERS``);
    one worker runs inline.
    """
    items = list(items)
    workers = settings.workers if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
