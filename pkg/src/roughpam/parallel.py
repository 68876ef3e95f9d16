"""Deterministic fan-out of independent work items over processes."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Sequence


def map_blocks(func: Callable, tasks: Sequence, workers: int = 1) -> list:
    """Apply ``func`` to each task and return results in task order.

    Randomness inside ``func`` must come from seeds carried by the task, so the
    output never depends on ``workers``.
    """
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(func, tasks))
