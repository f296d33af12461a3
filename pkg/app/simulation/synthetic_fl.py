"""
Synthetic federated training on strongly convex quadratics.

Client i holds F_i(w) = (a_i / 2) ||w - b_i||^2 with a_i in [m_cv, L_sm]. Each
round samples K clients with replacement from q, runs E local gradient steps
on each (with optional Gaussian gradient noise), and aggregates the updates
with importance weights p_i / q_i. Wall-clock time advances by the slowest
selected client's latency at the antenna position.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.analysis.geometry_link import latency_vector
from app.errors import InvalidParams, MaxRoundsExceeded
from app.models.base import Scenario
from app.models.sampling import SamplingDistribution
from app.parallel import stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FLSettings:
    dim: int = 10
    smoothness: float = 4.0
    strong_convexity: float = 1.0
    local_epochs: int = 1
    learning_rate: Optional[float] = None  # defaults to 0.5 / smoothness
    noise_std: Optional[Sequence[float]] = None  # per-client chi_i, zero by default
    target_spread: float = 1.0
    max_rounds: int = 100_000
    deadline: Optional[float] = None

    def __post_init__(self):
        if self.dim < 1 or self.local_epochs < 1 or self.max_rounds < 1:
            raise InvalidParams("dim, local_epochs and max_rounds must be >= 1")
        if not 0 < self.strong_convexity <= self.smoothness:
            raise InvalidParams("need 0 < strong_convexity <= smoothness")
        if self.learning_rate is not None and not self.learning_rate > 0:
            raise InvalidParams("learning_rate must be > 0")
        if self.deadline is not None and not self.deadline > 0:
            raise InvalidParams("deadline must be > 0")

    @property
    def step(self) -> float:
        return self.learning_rate if self.learning_rate is not None else 0.5 / self.smoothness


@dataclass(frozen=True, eq=False)
class QuadraticTask:
    curvature: np.ndarray  # a_i
    targets: np.ndarray  # b_i, shape (N, dim)
    weights: np.ndarray  # p_i
    noise: np.ndarray  # chi_i

    @property
    def optimum(self) -> np.ndarray:
        pa = self.weights * self.curvature
        return (pa[:, None] * self.targets).sum(axis=0) / pa.sum()

    def loss(self, w: np.ndarray) -> float:
        residual = np.square(w[None, :] - self.targets).sum(axis=1)
        return math.fsum(self.weights * 0.5 * self.curvature * residual)

    def gap(self, w: np.ndarray) -> float:
        return self.loss(w) - self.loss(self.optimum)


def build_task(scn: Scenario, settings: FLSettings, seed: int) -> QuadraticTask:
    """Client curvatures and targets; targets spread with the clients' label skew when available."""
    rng = stream(seed, 2)
    n = scn.n_clients
    curvature = rng.uniform(settings.strong_convexity, settings.smoothness, n)
    if scn.label_dists is not None:
        labels = np.asarray(scn.label_dists)
        skew = labels - labels.mean(axis=0)
        repeats = -(-settings.dim // skew.shape[1])
        skew = np.tile(skew, (1, repeats))[:, :settings.dim]
        targets = 1.0 + settings.target_spread * skew
    else:
        targets = 1.0 + rng.normal(0.0, 0.1, (n, settings.dim))
    noise = np.zeros(n) if settings.noise_std is None else np.asarray(settings.noise_std, dtype=float)
    if noise.size != n:
        raise InvalidParams(f"noise_std needs {n} entries, got {noise.size}")
    weights = np.array([c.agg_weight for c in scn.clients])
    return QuadraticTask(curvature=curvature, targets=targets, weights=weights, noise=noise)


@dataclass(frozen=True)
class FLRun:
    rounds_to_eps: int
    wallclock_to_eps: float
    final_gap: float
    gap_at_deadline: float


def run_fedavg(scn: Scenario, task: QuadraticTask, q, x: float, epsilon: float, settings: FLSettings,
               seed: int, K: Optional[int] = None) -> FLRun:
    """Train until F(w) - F* <= epsilon.

    Client draws and gradient noise come from streams keyed only by `seed`, so
    methods compared under the same seed share their random numbers.

    Raises:
        MaxRoundsExceeded: if epsilon is not reached within settings.max_rounds
    """
    if not epsilon > 0:
        raise InvalidParams("epsilon must be > 0")
    K = scn.cfg.sample_size if K is None else K
    q = SamplingDistribution.from_probs(q)
    t = latency_vector(scn.clients, x, scn.cfg)
    selector = stream(seed, 0)
    noise_rng = stream(seed, 1)
    eta = settings.step

    w = np.zeros(settings.dim)
    gap = task.gap(w)
    wallclock = 0.0
    rounds = 0
    gap_at_deadline = gap
    while gap > epsilon:
        if rounds >= settings.max_rounds:
            raise MaxRoundsExceeded(f"gap {gap:.3e} still above {epsilon:.1e} after {rounds} rounds")
        chosen = np.minimum(np.searchsorted(q.cum[1:], selector.random(K), side='right'), q.n - 1)
        update = np.zeros_like(w)
        for i in chosen:
            local = w.copy()
            for _ in range(settings.local_epochs):
                grad = task.curvature[i] * (local - task.targets[i])
                if task.noise[i] > 0:
                    grad = grad + task.noise[i] * noise_rng.standard_normal(settings.dim)
                local = local - eta * grad
            update += (task.weights[i] / q.q[i]) * (local - w)
        w = w + update / K
        wallclock += float(np.max(t[chosen]))
        rounds += 1
        gap = task.gap(w)
        if settings.deadline is None or wallclock <= settings.deadline:
            gap_at_deadline = gap

    return FLRun(rounds_to_eps=rounds, wallclock_to_eps=wallclock, final_gap=gap, gap_at_deadline=gap_at_deadline)


def closed_form_rounds(a: float, eta: float, init_sq_dist: float, epsilon: float) -> int:
    """Rounds for noiseless single-client gradient descent with one local step to reach gap epsilon."""
    if 0.5 * a * init_sq_dist <= epsilon:
        return 0
    return math.ceil(math.log(init_sq_dist * a / (2.0 * epsilon)) / math.log(1.0 / (1.0 - eta * a) ** 2))
