"""Bounded worker pool with a deterministic reduction order.

Jobs are (key, args) pairs.  Results come back ordered by sorted key, so
the reduction that follows is the same for any number of workers.
MSE_WORKERS caps the pool size.
"""

import os
from concurrent.futures import ProcessPoolExecutor


def max_workers():
    """Worker cap from MSE_WORKERS (default: the CPU count)."""
    raw = os.environ.get("MSE_WORKERS", "").strip()
    if not raw:
        return max(1, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"MSE_WORKERS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"MSE_WORKERS must be a positive integer, got {raw!r}")
    return n


def _call(item):
    fn, args = item
    return fn(*args)


def keyed_map(fn, jobs, workers=None, progress=None):
    """[(key, fn(*args))] over jobs = [(key, args)], sorted by key."""
    jobs = sorted(jobs, key=lambda kv: kv[0])
    keys = [k for k, _ in jobs]
    if len(set(keys)) != len(keys):
        raise ValueError("job keys must be unique")
    workers = max_workers() if workers is None else int(workers)
    workers = max(1, min(workers, len(jobs)))
    if workers == 1:
        out = []
        for i, (k, args) in enumerate(jobs):
            out.append((k, fn(*args)))
            if progress:
                progress(k, i + 1, len(jobs))
        return out
    with ProcessPoolExecutor(max_workers=workers) as ex:
        results = list(ex.map(_call, [(fn, args) for _, args in jobs]))
    return list(zip(keys, results))
