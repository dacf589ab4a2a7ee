from typing import TypeVar, Callable, Sequence, cast
import asyncio

TIn = TypeVar("TIn")   # input type
TOut = TypeVar("TOut")  # output type


class Throttling:
    """Runs blocking work on worker threads, at most `max_tasks` at a time."""

    def __init__(self, max_tasks: int):
        if max_tasks < 1:
            raise ValueError(f"max_tasks must be at least 1, got {max_tasks}")
        self.max_tasks = max_tasks

    async def submit(
        self,
        items: Sequence[TIn],
        func: Callable[[TIn], TOut]
    ) -> list[TOut]:
        """
        Apply `func` to every item in a thread; results keep the order of `items`.

        Every item finishes before this returns. If any call raised, the first
        failure in item order is re-raised.
        """
        # created per call inside the running loop
        semaphore = asyncio.Semaphore(self.max_tasks)

        async def worker(item: TIn) -> TOut:
            async with semaphore:
                return await asyncio.to_thread(func, item)

        results = await asyncio.gather(*(worker(item) for item in items), return_exceptions=True)
        for result in results:
            if isinstance(result, BaseException):
                raise result
        return [cast(TOut, result) for result in results]
