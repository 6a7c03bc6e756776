import asyncio
import logging
from typing import Any, Callable, Iterable, List, Optional, Sequence

from .errors import StereoliftError

logger = logging.getLogger("Stereolift.Executor")


class FrameExecutor:
    """
    Runs independent per-frame / per-candidate jobs on worker threads,
    bounded by a semaphore. Results come back in submission order.
    """
    def __init__(self, max_concurrent: int = 4, job_timeout: Optional[float] = None):
        if max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        self.max_concurrent = max_concurrent
        self.job_timeout = job_timeout

    def map(self, fn: Callable[[Any], Any], items: Iterable[Any], label: str = "job") -> List[Any]:
        """Synchronous entry point; raises the first job failure after all jobs settle."""
        items = list(items)
        if not items:
            return []
        if self.max_concurrent == 1 or len(items) == 1:
            return [fn(item) for item in items]
        return asyncio.run(self._map_async(fn, items, label))

    async def _map_async(self, fn: Callable[[Any], Any], items: Sequence[Any], label: str) -> List[Any]:
        semaphore = asyncio.Semaphore(self.max_concurrent)
        futures = [self._run_job(semaphore, fn, item, f"{label}[{i}]") for i, item in enumerate(items)]
        results = await asyncio.gather(*futures, return_exceptions=True)

        failures = [r for r in results if isinstance(r, BaseException)]
        if failures:
            logger.error(f"{len(failures)}/{len(items)} {label} jobs failed")
            raise failures[0]
        return list(results)

    async def _run_job(self, semaphore: asyncio.Semaphore, fn: Callable[[Any], Any], item: Any, name: str) -> Any:
        async with semaphore:
            try:
                if self.job_timeout is not None:
                    result = await asyncio.wait_for(asyncio.to_thread(fn, item), timeout=self.job_timeout)
                else:
                    result = await asyncio.to_thread(fn, item)
                logger.info(f"{name} ✅")
                return result
            except asyncio.TimeoutError:
                logger.error(f"{name} ⏳ exceeded {self.job_timeout}s limit")
                raise StereoliftError(f"{name} exceeded {self.job_timeout}s limit")
            except Exception as e:
                logger.error(f"{name} ❌ : {e}")
                raise
