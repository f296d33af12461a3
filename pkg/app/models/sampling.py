"""Types for the per-position participation problem."""
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from app.config import DEFAULT_N_STARTS
from app.errors import DidNotConverge, DimensionMismatch, InvalidParams, InvalidProblem
from app.models.base import _frozen_array


@dataclass(frozen=True, eq=False)
class LatencyProfile:
    """Latencies at a fixed antenna position, in nondecreasing order.

    perm[k] is the position (in the caller's client sequence) of the k-th fastest client.
    """
    sorted_t: np.ndarray
    perm: np.ndarray
    gaps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'sorted_t', _frozen_array(self.sorted_t))
        object.__setattr__(self, 'perm', _frozen_array(self.perm, dtype=np.int64))
        object.__setattr__(self, 'gaps', _frozen_array(self.gaps))
        n = self.sorted_t.size
        if n == 0:
            raise InvalidParams("latency profile is empty")
        if self.gaps.size != n - 1 or self.perm.size != n:
            raise DimensionMismatch("gaps must have N-1 entries and perm N entries")
        if np.any(self.gaps < 0):
            raise InvalidParams("sorted latencies must be nondecreasing")
        if not np.array_equal(np.sort(self.perm), np.arange(n)):
            raise InvalidParams("perm is not a permutation")

    @classmethod
    def from_sorted(cls, sorted_t, perm=None) -> 'LatencyProfile':
        t = np.asarray(sorted_t, dtype=float)
        if perm is None:
            perm = np.arange(t.size)
        return cls(sorted_t=t, perm=np.asarray(perm), gaps=np.diff(t))

    @property
    def n(self) -> int:
        return self.sorted_t.size


@dataclass(frozen=True, eq=False)
class SamplingDistribution:
    """A strictly positive point on the simplex, with cumulative masses cum[i] = Q_i (cum[0] = 0)."""
    q: np.ndarray
    cum: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'q', _frozen_array(self.q))
        object.__setattr__(self, 'cum', _frozen_array(self.cum))
        if self.q.ndim != 1 or self.q.size == 0:
            raise InvalidParams("q must be a nonempty vector")
        if self.cum.size != self.q.size + 1:
            raise DimensionMismatch("cum must have N+1 entries")
        if np.any(self.q <= 0):
            raise InvalidParams("sampling probabilities must be strictly positive")
        if abs(math.fsum(self.q) - 1.0) > 1e-12:
            raise InvalidParams(f"sampling probabilities must sum to 1, got {math.fsum(self.q)!r}")

    @classmethod
    def from_probs(cls, q) -> 'SamplingDistribution':
        """Normalize q onto the simplex and build the cumulative masses."""
        q = np.asarray(q, dtype=float)
        q = q / math.fsum(q)
        cum = np.concatenate(([0.0], np.cumsum(q)))
        cum[-1] = 1.0
        np.minimum(cum, 1.0, out=cum)
        return cls(q=q, cum=cum)

    @classmethod
    def uniform(cls, n: int) -> 'SamplingDistribution':
        return cls.from_probs(np.full(n, 1.0 / n))

    @property
    def n(self) -> int:
        return self.q.size


@dataclass(frozen=True)
class InnerSolveOptions:
    n_starts: int = DEFAULT_N_STARTS
    max_iters: int = 500
    grad_tol: float = 1e-9
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    floor_eps: float = 1e-12
    newton: bool = True

    def __post_init__(self):
        if self.n_starts < 1 or self.max_iters < 1:
            raise InvalidParams("n_starts and max_iters must be >= 1")
        if not self.grad_tol > 0:
            raise InvalidParams("grad_tol must be > 0")
        if not 0 < self.shrink < 1 or not 0 < self.armijo < 1 or not self.initial_step > 0:
            raise InvalidParams("invalid backtracking parameters")
        if not 0 < self.floor_eps < 1:
            raise InvalidParams("floor_eps must lie in (0, 1)")

    def check_dimension(self, n: int):
        if not self.floor_eps < 1.0 / n:
            raise InvalidParams(f"floor_eps must be < 1/N = {1.0 / n}")


@dataclass(frozen=True, eq=False)
class InnerSolution:
    """Result of one participation solve, in sorted-client order."""
    q: SamplingDistribution
    J: float
    kkt_residual: float
    converged: bool
    start_index: int = 0
    iterations: int = 0

    def raise_if_failed(self):
        if not self.converged:
            raise DidNotConverge(
                f"inner solve stopped with KKT residual {self.kkt_residual:.3e}")


@dataclass(frozen=True, eq=False)
class KKTReport:
    lambdas: np.ndarray
    lambda_spread: float
    recursion_residuals: np.ndarray
    psi: np.ndarray


@dataclass(frozen=True, eq=False)
class ClassPartition:
    """Latency classes: contiguous runs of (near-)tied clients in sorted order."""
    classes: Tuple[np.ndarray, ...]
    class_times: np.ndarray
    class_weights: np.ndarray
    sqrt_c: np.ndarray

    @property
    def m(self) -> int:
        return len(self.classes)

    @property
    def n(self) -> int:
        return self.sqrt_c.size


@dataclass(frozen=True, eq=False)
class ClassSolution:
    deltas: SamplingDistribution
    q: SamplingDistribution
    J: float
    kkt_residual: float
    converged: bool


@dataclass(frozen=True)
class TwoClassProblem:
    """Fast/slow classes with latencies t_f <= t_s and square-root aggregates C_f, C_s.

    A zero gap is accepted as the statistics-only limit, and C_s = 0 is accepted so
    that threshold checks can be evaluated at the boundary; the solver needs C_s > 0.
    """
    t_f: float
    t_s: float
    C_f: float
    C_s: float
    omega: float = 1.0
    nu: float = 0.0
    K: int = 1

    def __post_init__(self):
        if not self.t_s >= self.t_f:
            raise InvalidProblem(f"t_s ({self.t_s}) must be >= t_f ({self.t_f})")
        if not self.C_f > 0 or not self.C_s >= 0:
            raise InvalidProblem("C_f must be > 0 and C_s >= 0")
        if not self.omega > 0 or self.K < 1:
            raise InvalidProblem("omega must be > 0 and K >= 1")

    @property
    def gap(self) -> float:
        return self.t_s - self.t_f

    @property
    def stat_split(self) -> float:
        """Slow-class mass minimizing g alone."""
        return self.C_s / (self.C_f + self.C_s)


@dataclass(frozen=True)
class TwoClassSolution:
    delta: float
    objective: float
    stationarity_residual: float


@dataclass(frozen=True, eq=False)
class PositionSolution:
    """Inner solve at one antenna position.

    q_sorted and pi follow the latency order of `profile`; q is in the caller's client order.
    """
    x: float
    profile: LatencyProfile
    q_sorted: SamplingDistribution
    q: SamplingDistribution
    J: float
    f: float
    g: float
    pi: np.ndarray
    kkt_residual: float
    converged: bool
    n_classes: int
    start_index: int = 0
    note: Optional[str] = None
