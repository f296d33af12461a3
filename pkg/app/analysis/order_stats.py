"""
Order statistics of the synchronous round time.

A round samples K clients i.i.d. with replacement from q and lasts as long as
the slowest of them. With latencies sorted t_1 <= ... <= t_N and cumulative
masses Q_i, the expected round time is

    f(q) = sum_i (Q_i^K - Q_{i-1}^K) t_i = t_N - sum_i Delta_i Q_i^K.

Everything here works in sorted-client order; `sort_by_latency` produces the
profile and the permutation back to the caller's order.
"""
import logging
import math
from functools import partial
from typing import List, Sequence, Tuple

import numpy as np

from app.analysis.geometry_link import latency_vector
from app.config import MC_CHUNK
from app.errors import DimensionMismatch, InvalidParams, KTooSmall
from app.models.base import ClientProfile, SystemConfig
from app.models.sampling import LatencyProfile, SamplingDistribution
from app.parallel import parallel_map, stream

logger = logging.getLogger(__name__)

# Uniform draws per block; bounds memory at large K
_BLOCK_VALUES = 1 << 22


def sort_by_latency(clients: Sequence[ClientProfile], x: float, cfg: SystemConfig) -> LatencyProfile:
    """Latency profile at position x, ties broken by client id."""
    if not clients:
        raise InvalidParams("at least one client is required")
    t = latency_vector(clients, x, cfg)
    ids = np.array([c.id for c in clients])
    perm = np.lexsort((ids, t))
    return LatencyProfile.from_sorted(t[perm], perm)


def _check(q: SamplingDistribution, prof: LatencyProfile, K: int):
    if q.n != prof.n:
        raise DimensionMismatch(f"q has {q.n} entries, latency profile has {prof.n}")
    if K < 1:
        raise InvalidParams(f"sample size K must be >= 1, got {K}")


def straggler_pmf(q: SamplingDistribution, prof: LatencyProfile, K: int) -> np.ndarray:
    """pi_i = Q_i^K - Q_{i-1}^K, the probability that sorted client i is the straggler."""
    _check(q, prof, K)
    return np.diff(np.power(q.cum, K))


def expected_straggler(q: SamplingDistribution, prof: LatencyProfile, K: int) -> float:
    """Expected round time f(q) as the straggler-weighted mean latency."""
    pi = straggler_pmf(q, prof, K)
    value = math.fsum(pi * prof.sorted_t)
    return float(np.clip(value, prof.sorted_t[0], prof.sorted_t[-1]))


def expected_straggler_gap_form(q: SamplingDistribution, prof: LatencyProfile, K: int) -> float:
    """Expected round time as t_N minus the discounted adjacent gaps."""
    _check(q, prof, K)
    discount = math.fsum(prof.gaps * np.power(q.cum[1:-1], K))
    return float(prof.sorted_t[-1] - discount)


def _tail_weights(q: SamplingDistribution, prof: LatencyProfile, power: int) -> np.ndarray:
    """W[m] = sum over gaps i > m of Delta_i Q_i^power (0-based, W[N-1] = 0)."""
    w = prof.gaps * np.power(q.cum[1:-1], power)
    tail = np.cumsum(w[::-1])[::-1]
    return np.concatenate((tail, [0.0]))


def tail_sensitivity(q: SamplingDistribution, prof: LatencyProfile, K: int) -> np.ndarray:
    """D_s = K sum_{i >= s} Delta_i Q_i^{K-1}; the simplex gradient of f is -D."""
    _check(q, prof, K)
    return K * _tail_weights(q, prof, K - 1)


def straggler_hessian(q: SamplingDistribution, prof: LatencyProfile, K: int) -> np.ndarray:
    """Hessian of f: -K(K-1) sum_i Delta_i Q_i^{K-2} a_i a_i^T, a_i the indicator of the first i clients.

    Entry (a, b) only depends on max(a, b), so the matrix is built from the tail sums directly.

    Raises:
        KTooSmall: for K < 2 (f is linear in q).
    """
    if K < 2:
        raise KTooSmall(f"the straggler Hessian needs K >= 2, got {K}")
    _check(q, prof, K)
    tail = _tail_weights(q, prof, K - 2)
    idx = np.arange(prof.n)
    return -K * (K - 1) * tail[np.maximum.outer(idx, idx)]


def draw_rounds(rng: np.random.Generator, cum: np.ndarray, K: int, n_rounds: int) -> np.ndarray:
    """Sample n_rounds rounds of K sorted-client indices with replacement, shape (n_rounds, K)."""
    n = cum.size - 1
    rows_per_block = max(1, _BLOCK_VALUES // K)
    blocks = []
    for start in range(0, n_rounds, rows_per_block):
        rows = min(rows_per_block, n_rounds - start)
        u = rng.random((rows, K))
        blocks.append(np.minimum(np.searchsorted(cum[1:], u, side='right'), n - 1))
    if not blocks:
        return np.empty((0, K), dtype=np.int64)
    return np.vstack(blocks)


def _chunk_moments(cum: np.ndarray, t: np.ndarray, K: int, seed: int,
                   chunk: Tuple[int, int]) -> Tuple[int, float, float, np.ndarray]:
    index, size = chunk
    rng = stream(seed, index)
    stragglers = draw_rounds(rng, cum, K, size).max(axis=1)
    values = t[stragglers]
    mean = float(values.mean())
    m2 = float(np.sum(np.square(values - mean)))
    return size, mean, m2, np.bincount(stragglers, minlength=t.size)


def _chunks(n_draws: int) -> List[Tuple[int, int]]:
    return [(i, min(MC_CHUNK, n_draws - start)) for i, start in enumerate(range(0, n_draws, MC_CHUNK))]


def _monte_carlo(q: SamplingDistribution, prof: LatencyProfile, K: int, n_draws: int,
                 seed: int, jobs: int) -> Tuple[float, float, np.ndarray]:
    _check(q, prof, K)
    if n_draws < 1:
        raise InvalidParams(f"n_draws must be >= 1, got {n_draws}")
    work = partial(_chunk_moments, np.asarray(q.cum), np.asarray(prof.sorted_t), K, seed)
    results = parallel_map(work, _chunks(n_draws), jobs)

    # Chunks merged in index order so the estimate does not depend on the worker count
    count, mean, m2 = 0, 0.0, 0.0
    counts = np.zeros(prof.n, dtype=np.int64)
    for size, chunk_mean, chunk_m2, chunk_counts in results:
        total = count + size
        delta = chunk_mean - mean
        mean += delta * size / total
        m2 += chunk_m2 + delta * delta * count * size / total
        count = total
        counts += chunk_counts

    if prof.sorted_t[0] == prof.sorted_t[-1]:
        return float(prof.sorted_t[0]), 0.0, counts
    stderr = math.sqrt(m2 / (count - 1) / count) if count > 1 else 0.0
    return mean, stderr, counts


def monte_carlo_straggler(q: SamplingDistribution, prof: LatencyProfile, K: int, n_draws: int,
                          seed: int, jobs: int = 1) -> Tuple[float, float]:
    """Monte Carlo estimate of f(q) and its standard error.

    Draws are generated in fixed chunks, each on its own stream keyed by
    (seed, chunk index), so the result is identical for any `jobs`.
    """
    mean, stderr, _ = _monte_carlo(q, prof, K, n_draws, seed, jobs)
    logger.debug(f"Monte Carlo f over {n_draws} draws: {mean:.6g} +/- {stderr:.2g}")
    return mean, stderr


def monte_carlo_straggler_frequencies(q: SamplingDistribution, prof: LatencyProfile, K: int,
                                      n_draws: int, seed: int, jobs: int = 1) -> np.ndarray:
    """Empirical frequency with which each sorted client is the straggler."""
    _, _, counts = _monte_carlo(q, prof, K, n_draws, seed, jobs)
    return counts / n_draws
