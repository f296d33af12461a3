"""Monte Carlo simulation of synchronous rounds at a fixed position and sampling."""
import logging
from typing import Optional

import numpy as np

from app.analysis.order_stats import draw_rounds, sort_by_latency
from app.config import MC_CHUNK
from app.errors import InvalidParams
from app.models.base import Scenario
from app.models.sampling import SamplingDistribution
from app.models.simulation import RoundTrace
from app.parallel import stream

logger = logging.getLogger(__name__)


def simulate_rounds(scn: Scenario, q, x: float, R: int, seed: int, K: Optional[int] = None) -> RoundTrace:
    """Simulate R rounds of K draws with replacement; each round lasts as long as its slowest draw.

    Args:
        scn: Scenario
        q: Sampling probabilities in client order
        x: Antenna position
        R: Number of rounds
        seed: Seed; rounds are drawn in fixed chunks with one stream per chunk
        K: Sample size, defaults to the scenario's

    Returns:
        RoundTrace with client indices in the scenario's order
    """
    if R < 1:
        raise InvalidParams(f"R must be >= 1, got {R}")
    K = scn.cfg.sample_size if K is None else K
    prof = sort_by_latency(scn.clients, x, scn.cfg)
    q_sorted = SamplingDistribution.from_probs(np.asarray(q, dtype=float)[prof.perm])

    blocks = []
    for index, start in enumerate(range(0, R, MC_CHUNK)):
        blocks.append(draw_rounds(stream(seed, index), np.asarray(q_sorted.cum), K, min(MC_CHUNK, R - start)))
    sorted_draws = np.vstack(blocks)

    slowest = sorted_draws.max(axis=1)
    times = prof.sorted_t[slowest]
    trace = RoundTrace(straggler_times=times, selections=prof.perm[sorted_draws], stragglers=prof.perm[slowest],
                       cumulative=np.cumsum(times))
    logger.debug(f"Simulated {R} rounds at x={x:.6g}: mean round time {times.mean():.6g} s")
    return trace
