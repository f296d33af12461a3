"""Types for the antenna-placement search."""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from app.config import (DEFAULT_BREAKPOINT_GRID, DEFAULT_PROBES, DEFAULT_TIE_TOL, DEFAULT_TOL_T, DEFAULT_TOL_X,
                        MAX_PROBES)
from app.errors import InvalidParams
from app.models.base import _frozen_array
from app.models.sampling import InnerSolveOptions, PositionSolution, SamplingDistribution


@dataclass(frozen=True)
class PlacementOptions:
    inner: InnerSolveOptions = field(default_factory=InnerSolveOptions)
    grid_points: int = DEFAULT_BREAKPOINT_GRID
    probes: int = DEFAULT_PROBES
    max_probes: int = MAX_PROBES
    tol_x: float = DEFAULT_TOL_X
    tol_t: float = DEFAULT_TOL_T
    tie_tol: float = DEFAULT_TIE_TOL
    jobs: int = 1

    def __post_init__(self):
        if self.grid_points < 2:
            raise InvalidParams("grid_points must be >= 2")
        if self.probes < 2 or self.max_probes < self.probes:
            raise InvalidParams("need 2 <= probes <= max_probes")
        if not (self.tol_x > 0 and self.tol_t > 0 and self.tie_tol >= 0):
            raise InvalidParams("tolerances must be positive")
        if self.jobs < 1:
            raise InvalidParams("jobs must be >= 1")

    @property
    def path_inner(self) -> InnerSolveOptions:
        """Single-start options for warm-started solves along a probe path."""
        inner = self.inner
        return InnerSolveOptions(n_starts=1, max_iters=inner.max_iters, grad_tol=inner.grad_tol,
                                 initial_step=inner.initial_step, shrink=inner.shrink, armijo=inner.armijo,
                                 floor_eps=inner.floor_eps, newton=inner.newton)


@dataclass(frozen=True)
class Breakpoint:
    """A position where clients i and j (caller's order) swap or touch in latency."""
    x: float
    i: int
    j: int
    kind: str  # 'crossing' or 'touch'


@dataclass(frozen=True, eq=False)
class BreakpointPartition:
    """Ordering breakpoints of [0, L], with the latency order inside each interval."""
    points: np.ndarray
    signatures: Tuple[np.ndarray, ...]
    breakpoints: Tuple[Breakpoint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'points', _frozen_array(self.points))
        if self.points.size < 2 or np.any(np.diff(self.points) <= 0):
            raise InvalidParams("partition points must be strictly increasing with at least two entries")
        if len(self.signatures) != self.points.size - 1:
            raise InvalidParams("one signature per interval is required")

    @property
    def intervals(self) -> Tuple[Tuple[float, float], ...]:
        return tuple((float(a), float(b)) for a, b in zip(self.points[:-1], self.points[1:]))

    def near_point(self, x: float, tol: float) -> bool:
        return bool(np.any(np.abs(self.points - x) <= tol))


@dataclass(frozen=True, eq=False)
class EnvelopeEvaluation:
    x: float
    phi: float
    solution: PositionSolution

    @property
    def pi(self) -> np.ndarray:
        return self.solution.pi


@dataclass(frozen=True, eq=False)
class Candidate:
    x: float
    J: float
    source: str
    converged: bool
    q: Optional[np.ndarray] = None
    error: Optional[str] = None


@dataclass(frozen=True, eq=False)
class PlacementSolution:
    """Best position and sampling; q_star and straggler_probs are in the caller's client order."""
    x_star: float
    q_star: SamplingDistribution
    J_star: float
    f_star: float
    g_star: float
    candidates: Tuple[Candidate, ...]
    straggler_probs: np.ndarray
    partition: BreakpointPartition
    kkt_residual: float
    converged: bool
    method: str = 'pass_joint'
    position: Optional[PositionSolution] = None
