import asyncio
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Sequence, TypeVar

import psutil

from src.utils.logger import logger

T = TypeVar("T")
R = TypeVar("R")


def default_jobs() -> int:
    """Physical core count, falling back to 1"""
    return psutil.cpu_count(logical=False) or 1


def resolve_jobs(jobs: Optional[int]) -> int:
    return default_jobs() if not jobs else max(1, int(jobs))


def check_memory(n_bytes: int, what: str) -> None:
    """Warn when a planned allocation exceeds half of the available memory"""
    available = psutil.virtual_memory().available
    if n_bytes > 0.5 * available:
        logger.warning(
            f"{what} needs ~{n_bytes / 2**20:.0f} MiB, {available / 2**20:.0f} MiB available"
        )


async def run_batch(func: Callable[[T], R], chunks: Sequence[T], jobs: int) -> List[R]:
    """Run `func` over chunks on a worker pool; results come back in chunk order"""

    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        tasks = [loop.run_in_executor(pool, func, chunk) for chunk in chunks]
        results = await asyncio.gather(*tasks, return_exceptions=True)

    failures = [r for r in results if isinstance(r, BaseException)]
    for failure in failures:
        logger.error(f"Batch chunk failed: {failure}")
    if failures:
        raise failures[0]

    logger.debug(f"Completed batch of {len(chunks)} chunk(s) on {jobs} worker(s)")
    return list(results)


def run_parallel(func: Callable[[T], R], chunks: Sequence[T], jobs: int) -> List[R]:
    """Synchronous entry point; a single job runs inline"""
    if jobs <= 1 or len(chunks) <= 1:
        return [func(chunk) for chunk in chunks]
    return asyncio.run(run_batch(func, chunks, jobs))


def split_chunks(items: Sequence[T], jobs: int) -> List[Sequence[T]]:
    """Contiguous chunks, a few per worker"""
    n_chunks = max(1, min(len(items), 4 * jobs))
    size = -(-len(items) // n_chunks) if items else 1
    return [items[i:i + size] for i in range(0, len(items), size)]
