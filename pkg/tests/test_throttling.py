import asyncio
import threading

import pytest

from vlatrainer.utils.throttling import Throttling


def test_results_keep_item_order():
    throttling = Throttling(2)

    assert asyncio.run(throttling.submit([3, 1, 2], lambda x: x * 10)) == [30, 10, 20]


def test_instance_reusable_across_event_loops():
    throttling = Throttling(2)

    first = asyncio.run(throttling.submit([1, 2], lambda x: x + 1))
    second = asyncio.run(throttling.submit([3, 4], lambda x: x + 1))

    assert (first, second) == ([2, 3], [4, 5])


async def test_failure_raised_after_every_item_finished():
    throttling = Throttling(4)
    finished = []
    lock = threading.Lock()

    def work(item: int) -> int:
        if item in (1, 3):
            raise RuntimeError(f"item {item}")
        with lock:
            finished.append(item)
        return item

    with pytest.raises(RuntimeError, match="item 1"):
        await throttling.submit([0, 1, 2, 3], work)

    assert sorted(finished) == [0, 2]


def test_rejects_zero_workers():
    with pytest.raises(ValueError):
        Throttling(0)
