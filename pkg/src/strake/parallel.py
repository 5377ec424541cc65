"""Worker-count policy shared by the parallel loops.

``STRAKE_THREADS`` caps the number of worker threads; unset means one
worker per CPU.  Results are always collected in input order, so output
does not depend on the worker count.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["worker_count", "pmap"]


def worker_count() -> int:
    raw = os.environ.get("STRAKE_THREADS", "").strip()
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return max(1, os.cpu_count() or 1)


def pmap(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]`` on up to ``workers`` threads, order preserved."""
    items = list(items)
    n = worker_count() if workers is None else max(1, int(workers))
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=min(n, len(items))) as ex:
        return list(ex.map(fn, items))
