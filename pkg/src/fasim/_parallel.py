"""Deterministic worker-thread fan-out for replication-style loops.

BLAS pools are pinned to one thread inside the mapped region no matter how
many workers run, so results are identical for any worker count and the
only thing parallelism changes is wall-clock time.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional

from threadpoolctl import threadpool_limits


def default_threads() -> int:
    env = os.environ.get("FASIM_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def parallel_map(fn: Callable[[int], object], count: int, threads: Optional[int]) -> list:
    """Apply fn to 0..count-1, collecting results in index order."""
    workers = threads if threads is not None else default_threads()
    results: list = [None] * count
    with threadpool_limits(limits=1):
        if workers <= 1 or count <= 1:
            for i in range(count):
                results[i] = fn(i)
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for i, res in enumerate(pool.map(fn, range(count))):
                    results[i] = res
    return results
