"""Seed-splitting and worker fan-out.

Every random stream in the toolkit is derived from ``(master_seed, stage,
index)``, so results never depend on how work is split across processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from enum import IntEnum
from typing import Callable, Iterable, Iterator, List, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


class Stage(IntEnum):
    GAP = 1
    GAP_FRESH = 2
    COVERAGE = 3
    VERIFY = 4
    VERIFY_FRESH = 5
    DEPLOY = 6


def stream(master_seed: int, stage: int, index: int = 0) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(stage), int(index)))
    return np.random.Generator(np.random.PCG64(seq))


def imap(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> Iterator[R]:
    """Lazy order-preserving map, optionally over a process pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        for it in items:
            yield fn(it)
        return
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        yield from pool.map(fn, items)


def pmap(fn: Callable[[T], R], items: Sequence[T], workers: int = 1) -> List[R]:
    return list(imap(fn, items, workers))


def chunks(n: int, size: int) -> Iterable[range]:
    for start in range(0, n, size):
        yield range(start, min(n, start + size))
