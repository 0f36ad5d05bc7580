"""Order-preserving parallel map. SADDLEFLOW_THREADS caps the worker count."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

__all__ = ["thread_count", "pmap"]


def thread_count(default: int | None = None) -> int:
    raw = os.environ.get("SADDLEFLOW_THREADS")
    if raw:
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"SADDLEFLOW_THREADS must be an integer, got {raw!r}") from None
        return max(1, value)
    return default if default is not None else (os.cpu_count() or 1)


def pmap(fn, items, threads: int | None = None) -> list:
    """list(map(fn, items)) evaluated on a thread pool; results keep input order."""
    items = list(items)
    workers = min(thread_count() if threads is None else max(1, threads), len(items))
    if workers <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
