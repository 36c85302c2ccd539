"""Fan independent, separately seeded jobs out to worker threads."""
from __future__ import annotations

import asyncio
from collections.abc import Callable, Iterable
import logging
from typing import TypeVar

_LOGGER = logging.getLogger(__name__)

ItemT = TypeVar("ItemT")
ResultT = TypeVar("ResultT")


async def _gather(
    func: Callable[[ItemT], ResultT], items: list[ItemT], workers: int
) -> list[ResultT]:
    """Run func over items with at most ``workers`` in flight, keeping input order."""
    limit = asyncio.Semaphore(workers)

    async def _run(item: ItemT) -> ResultT:
        async with limit:
            return await asyncio.to_thread(func, item)

    return list(await asyncio.gather(*(_run(item) for item in items)))


def run_jobs(
    func: Callable[[ItemT], ResultT], items: Iterable[ItemT], workers: int = 1
) -> list[ResultT]:
    """Return [func(item) for item in items], computed on up to ``workers`` threads."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    try:
        asyncio.get_running_loop()
    except RuntimeError:
        _LOGGER.debug("Running %d jobs on %d workers", len(items), workers)
        return asyncio.run(_gather(func, items, workers))
    _LOGGER.debug("Event loop already running, running %d jobs inline", len(items))
    return [func(item) for item in items]
