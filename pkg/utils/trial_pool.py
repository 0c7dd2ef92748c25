"""Thread pool for independent disorder trials.

Each trial writes into its own slot; callers reduce the slots serially in
trial order, so results never depend on the number of workers.
"""
from __future__ import annotations

import contextvars
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, TypeVar

from config import Config

logger = logging.getLogger(__name__)

T = TypeVar("T")


def run_trials(fn: Callable[[int], T], trials: int, *, workers: Optional[int] = None) -> list[T]:
    """[fn(0), fn(1), ..., fn(trials - 1)], evaluated on up to `workers` threads.

    The first failing trial (in trial order) re-raises its exception.
    """
    workers = Config.WORKERS if workers is None else max(1, int(workers))
    if workers == 1 or trials <= 1:
        return [fn(t) for t in range(trials)]
    slots: list[Optional[T]] = [None] * trials
    with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="trial") as pool:
        futures = [pool.submit(contextvars.copy_context().run, fn, t) for t in range(trials)]
        for t, fut in enumerate(futures):
            slots[t] = fut.result()
    logger.debug("%d trials done on %d workers", trials, workers)
    return slots  # type: ignore[return-value]
