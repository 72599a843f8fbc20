import os
from concurrent.futures import ProcessPoolExecutor

THREADS_ENV = "SNKB_THREADS"


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        n = int(raw)
        if n < 1:
            raise ValueError(f"{THREADS_ENV} must be >= 1, got {raw}")
        return n
    return os.cpu_count() or 1


def pmap(fn, items, threads=None, chunksize=8):
    """Ordered map; results never depend on ``threads``."""
    items = list(items)
    threads = default_threads() if threads is None else int(threads)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items, chunksize=chunksize))
