"""Replica-level parallelism.

Worker count comes from the KPZLAB_WORKERS environment variable only
(default 1 = serial).  Tasks are closures inherited by forked workers;
results are always assembled in replica order, so the output is identical
for any worker count.
"""
from __future__ import annotations

import multiprocessing as mp
import os

_TASK = None


def worker_count() -> int:
    return max(1, int(os.environ.get("KPZLAB_WORKERS", "1")))


def _call(r):
    return _TASK(r)


def run_replicas(task, n: int, workers: int | None = None) -> list:
    """[task(0), ..., task(n-1)], optionally fanned out over forked workers."""
    global _TASK
    workers = worker_count() if workers is None else workers
    if workers <= 1 or n <= 1:
        return [task(r) for r in range(n)]
    _TASK = task
    try:
        ctx = mp.get_context("fork")
        with ctx.Pool(min(workers, n)) as pool:
            return pool.map(_call, range(n), chunksize=max(1, n // (4 * workers)))
    finally:
        _TASK = None
