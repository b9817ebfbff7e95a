from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """
    Applies fn to every item, on a thread pool when threads > 1.
    Results always come back in input order, so any reduction done by the
    caller sees the same sequence whatever the thread count.
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def row_bands(height: int, threads: int) -> List[slice]:
    """Splits [0, height) into contiguous row bands, one or more per worker."""
    n_bands = max(1, min(height, threads * 2 if threads > 1 else 1))
    edges = [round(i * height / n_bands) for i in range(n_bands + 1)]
    return [slice(edges[i], edges[i + 1]) for i in range(n_bands) if edges[i] < edges[i + 1]]
