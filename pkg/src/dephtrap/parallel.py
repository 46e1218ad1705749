"""Deterministic worker pool helpers.

Results never depend on the number of workers: tasks are pure, each writes
to its own slot, and BLAS inside a task is pinned to a single thread.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

_GLOBAL_CAP = None


def set_thread_cap(n):
    """Global cap applied by the CLI ``--threads`` flag."""
    global _GLOBAL_CAP
    _GLOBAL_CAP = None if n is None else max(1, int(n))


def resolve_threads(threads=None) -> int:
    n = threads if threads is not None else (os.cpu_count() or 1)
    if _GLOBAL_CAP is not None:
        n = min(n, _GLOBAL_CAP)
    return max(1, int(n))


@contextmanager
def single_threaded_blas():
    with threadpool_limits(limits=1):
        yield


def parallel_map(fn, items, threads=None):
    """Ordered map of ``fn`` over ``items`` with up to ``threads`` workers."""
    items = list(items)
    n = resolve_threads(threads)
    with single_threaded_blas():
        if n == 1 or len(items) <= 1:
            return [fn(it) for it in items]
        with ThreadPoolExecutor(max_workers=n) as pool:
            return list(pool.map(fn, items))
