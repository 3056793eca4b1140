"""Replication fan-out over a thread pool; results come back in index order."""

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

T = TypeVar('T')


def run_indexed(fn: Callable[[int], T], indices: Sequence[int], workers: int = 1) -> List[T]:
    """Apply fn to every replication index; output order never depends on scheduling"""
    if workers <= 1 or len(indices) < 2:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices))
