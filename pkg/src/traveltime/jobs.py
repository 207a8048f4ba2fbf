"""Process-pool work queue for independent experiment cells."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

_SHARED = None


def _init(shared):
    global _SHARED
    _SHARED = shared


def _call(args):
    fn, item = args
    return fn(_SHARED, item)


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def run_jobs(fn, items, shared=None, workers: int = 1) -> list:
    """``[fn(shared, item) for item in items]``, possibly in parallel.

    ``fn`` must be a module-level function. ``shared`` is sent to each
    worker once. Results come back in input order whatever the schedule.
    """
    items = list(items)
    if workers is None or workers < 1:
        workers = default_workers()
    if workers == 1 or len(items) < 2:
        return [fn(shared, item) for item in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items)), initializer=_init,
                             initargs=(shared,)) as pool:
        chunk = max(1, len(items) // (4 * workers))
        return list(pool.map(_call, [(fn, item) for item in items], chunksize=chunk))
