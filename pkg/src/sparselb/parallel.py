"""Process-pool fan-out for independent simulation cells."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor


def pmap(fn, items, workers: int = 1) -> list:
    """``[fn(item) for item in items]``, optionally spread over worker processes.

    Results come back in input order, so output files do not depend on
    scheduling.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
