"""Order-preserving map over a thread pool.

Work items must not share mutable state; results come back in input
order, so serial and threaded runs aggregate identically.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

_default_threads = 1


def set_threads(n):
    global _default_threads
    _default_threads = max(1, int(n))


def get_threads():
    return _default_threads


def pmap(fn, items, threads=None):
    threads = _default_threads if threads is None else max(1, int(threads))
    items = list(items)
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
