"""Deterministic ensemble mapping: per-sample tasks, fixed chunking, worker pools.

Results are keyed by sample index and assembled in index order, so the worker
count can never change an estimate; only per-sample RNG keying is used (no
shared stream partitioning).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass


@dataclass
class TaskFailure:
    index: int
    error: str


def ensemble_map(task, count: int, workers: int = 1):
    """Apply `task(index)` for index in 0..count-1, ordered, failures isolated.

    Returns (results, failures): results is a list with None at failed slots,
    failures a list of TaskFailure.  `task` must be picklable for workers > 1.
    """
    if count < 1:
        raise ValueError("empty ensemble")
    if workers < 1:
        raise ValueError("workers >= 1 required")
    results = [None] * count
    failures: list[TaskFailure] = []
    if workers == 1:
        for i in range(count):
            try:
                results[i] = task(i)
            except Exception as e:  # noqa: BLE001 - isolation contract
                failures.append(TaskFailure(i, repr(e)))
        return results, failures
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = {pool.submit(_guard, task, i): i for i in range(count)}
        for fut, i in futs.items():
            ok, payload = fut.result()
            if ok:
                results[i] = payload
            else:
                failures.append(TaskFailure(i, payload))
    failures.sort(key=lambda f: f.index)
    return results, failures


def _guard(task, i):
    try:
        return True, task(i)
    except Exception as e:  # noqa: BLE001
        return False, repr(e)


def chunk_ranges(count: int, chunk: int):
    """Fixed chunk boundaries [start, stop) independent of worker count."""
    return [(s, min(s + chunk, count)) for s in range(0, count, chunk)]


def map_chunks(func, arg_list, workers: int = 1):
    """Run func over arg tuples, preserving order; plain map when workers == 1."""
    if workers == 1:
        return [func(a) for a in arg_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, arg_list))
