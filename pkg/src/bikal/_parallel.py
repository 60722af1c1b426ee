"""Order-preserving map over pure functions, optionally on a thread pool."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor


def parallel_map(fn, items, threads: int = 1) -> list:
    """Apply fn to every item, preserving order; threads > 1 uses a pool.

    Results are identical to the sequential path because fn must be pure and
    the pool's map preserves input order.
    """
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
