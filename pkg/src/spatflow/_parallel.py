"""Thread fan-out whose results never depend on the thread count."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

_threads = None


def default_threads():
    if _threads is not None:
        return _threads
    env = os.environ.get("MM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def set_threads(n):
    global _threads
    _threads = None if n is None else max(1, int(n))


def pmap(fn, items, threads=None):
    """``list(map(fn, items))``, optionally on a thread pool.

    Output order follows input order, so callers that only combine results
    positionally are bit-identical for any thread count.
    """
    items = list(items)
    n = default_threads() if threads is None else max(1, int(threads))
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))
