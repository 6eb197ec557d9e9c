from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

DEFAULT_CHUNK = 256


def chunk_ranges(n, chunk=DEFAULT_CHUNK):
    """Fixed index chunks; independent of the worker count so reductions are too."""
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def ordered_map(fn, items, threads=1):
    """``list(map(fn, items))`` evaluated on a thread pool, results in input order."""
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(fn, items))
