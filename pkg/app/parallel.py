"""Seeded RNG streams and order-preserving fan-out across worker processes."""
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np

logger = logging.getLogger(__name__)

T = TypeVar('T')
R = TypeVar('R')


def stream(seed: int, *index: int) -> np.random.Generator:
    """Independent Philox stream keyed by (seed, index...).

    The same key always yields the same stream, whatever the worker layout.
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in index))
    return np.random.Generator(np.random.Philox(sequence))


def default_jobs() -> int:
    return os.cpu_count() or 1


def parallel_map(fn: Callable[[T], R], items: Iterable[T], jobs: Optional[int] = 1) -> List[R]:
    """Map fn over items, results in input order. jobs=1 runs in-process."""
    items = list(items)
    jobs = default_jobs() if jobs is None else jobs
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    workers = min(jobs, len(items))
    logger.debug(f"Fanning out {len(items)} tasks over {workers} workers")
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def derive_seed(seed: int, *index: int) -> int:
    """64-bit child seed for the cell (seed, index...)."""
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(i) for i in index))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])
