"""
Antenna placement over the waveguide.

Between ordering breakpoints (positions where two latency curves cross) the
optimal value J*(x) is smooth, and its derivative divided by g has the sign of

    phi(x) = sum_i pi_i t_i'(x),

with pi the straggler pmf of the inner optimum. The search brackets the sign
changes of phi on each interval, bisects them, and compares every root,
breakpoint and client closest-approach point by a fresh inner solve.
"""
import logging
import math
from dataclasses import dataclass
from functools import partial
from itertools import combinations
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import bisect, minimize_scalar

from app.analysis.geometry_link import derivative_vector, latency, latency_matrix, latency_vector
from app.analysis.participation import evaluate_at_position, solve_at_position
from app.errors import DidNotConverge, InvalidParams, NumericError, OnBreakpoint
from app.models.base import ClientProfile, ConvergenceConstants, SystemConfig
from app.models.placement import (Breakpoint, BreakpointPartition, Candidate, EnvelopeEvaluation,
                                  PlacementOptions, PlacementSolution)
from app.models.sampling import InnerSolveOptions, PositionSolution
from app.parallel import parallel_map

logger = logging.getLogger(__name__)


def _order(clients: Sequence[ClientProfile], x: float, cfg: SystemConfig) -> np.ndarray:
    t = latency_vector(clients, x, cfg)
    return np.lexsort((np.array([c.id for c in clients]), t))


def _pair_breakpoints(clients, cfg, xs, T, i, j, tol_x, tol_t) -> List[Breakpoint]:
    diff = T[i] - T[j]
    if np.max(np.abs(diff)) <= tol_t:
        return []  # identically tied pair; handled as a latency class

    def gap(x):
        return float(latency(clients[i], x, cfg) - latency(clients[j], x, cfg))

    found = []
    sign = np.sign(diff)
    changes = np.flatnonzero(sign[:-1] * sign[1:] < 0)
    for k in changes:
        found.append(Breakpoint(x=float(bisect(gap, xs[k], xs[k + 1], xtol=tol_x)), i=i, j=j, kind='crossing'))
    for k in np.flatnonzero(sign == 0):
        found.append(Breakpoint(x=float(xs[k]), i=i, j=j, kind='crossing'))

    # Near-tangential touches: local minima of |diff| without a sign change next to them
    magnitude = np.abs(diff)
    bracketed = set(changes.tolist()) | set((changes + 1).tolist())
    minima = np.flatnonzero((magnitude[1:-1] < magnitude[:-2]) & (magnitude[1:-1] <= magnitude[2:])) + 1
    for k in minima:
        if k in bracketed or sign[k] == 0:
            continue
        result = minimize_scalar(lambda x: abs(gap(x)), bounds=(xs[k - 1], xs[k + 1]),
                                 method='bounded', options={'xatol': tol_x})
        if result.fun <= tol_t:
            found.append(Breakpoint(x=float(result.x), i=i, j=j, kind='touch'))
    return found


def find_breakpoints(clients: Sequence[ClientProfile], cfg: SystemConfig, tol_x: float, tol_t: float,
                     grid_points: int = 2048) -> BreakpointPartition:
    """Positions in (0, L) where two clients' latency curves cross or touch, merged with {0, L}.

    Every pair is scanned on a uniform grid; sign changes are refined by
    bisection to tol_x and local minima of |t_i - t_j| below tol_t count as
    touches. Points closer than tol_x are merged.
    """
    L = cfg.waveguide_len_m
    xs = np.linspace(0.0, L, grid_points)
    T = latency_matrix(clients, xs, cfg)

    found: List[Breakpoint] = []
    for i, j in combinations(range(len(clients)), 2):
        found.extend(_pair_breakpoints(clients, cfg, xs, T, i, j, tol_x, tol_t))
    found.sort(key=lambda b: (b.x, b.i, b.j))

    kept: List[Breakpoint] = []
    for bp in found:
        if bp.x <= tol_x or bp.x >= L - tol_x:
            continue
        if kept and bp.x - kept[-1].x <= tol_x:
            continue
        kept.append(bp)

    points = np.array([0.0] + [bp.x for bp in kept] + [L])
    signatures = []
    for a, b in zip(points[:-1], points[1:]):
        signature = _order(clients, 0.5 * (a + b), cfg)
        for probe in (a + 0.25 * (b - a), a + 0.75 * (b - a)):
            if not np.array_equal(signature, _order(clients, probe, cfg)):
                logger.warning(f"Latency order changes inside [{a:.6g}, {b:.6g}]; a crossing was missed")
                break
        signatures.append(signature)

    logger.info(f"Found {len(kept)} ordering breakpoints for {len(clients)} clients")
    return BreakpointPartition(points=points, signatures=tuple(signatures), breakpoints=tuple(kept))


def _phi(solution: PositionSolution, clients, cfg) -> float:
    slopes = derivative_vector(clients, solution.x, cfg)[solution.profile.perm]
    return math.fsum(solution.pi * slopes)


def envelope_derivative(x: float, clients: Sequence[ClientProfile], cfg: SystemConfig,
                        consts: ConvergenceConstants, K: int, inner_opts: Optional[InnerSolveOptions] = None,
                        seed: int = 0, partition: Optional[BreakpointPartition] = None,
                        opts: Optional[PlacementOptions] = None, warm_starts: Sequence[np.ndarray] = ()
                        ) -> EnvelopeEvaluation:
    """g-normalized derivative of J*(x) inside a fixed-order interval.

    Raises:
        OnBreakpoint: if x is within tol_x of a partition point
    """
    opts = opts or PlacementOptions()
    inner_opts = inner_opts or opts.inner
    if partition is None:
        partition = find_breakpoints(clients, cfg, opts.tol_x, opts.tol_t, opts.grid_points)
    if partition.near_point(x, opts.tol_x):
        raise OnBreakpoint(f"x={x} lies on an ordering breakpoint")
    solution = solve_at_position(clients, x, cfg, consts, K, inner_opts, seed, opts.tie_tol, warm_starts)
    return EnvelopeEvaluation(x=float(x), phi=_phi(solution, clients, cfg), solution=solution)


class _EnvelopePath:
    """phi along one interval, warm-starting each inner solve from the previous one."""

    def __init__(self, clients, cfg, consts, K, opts: PlacementOptions, seed: int):
        self.clients = clients
        self.cfg = cfg
        self.consts = consts
        self.K = K
        self.opts = opts
        self.seed = seed
        self.last_q = None
        self.visited: List[PositionSolution] = []

    def __call__(self, x: float) -> float:
        warm = [self.last_q] if self.last_q is not None else []
        solution = solve_at_position(self.clients, x, self.cfg, self.consts, self.K, self.opts.path_inner,
                                     self.seed, self.opts.tie_tol, warm)
        self.last_q = solution.q.q
        self.visited.append(solution)
        return _phi(solution, self.clients, self.cfg)


class _FixedSamplingPath:
    """phi for a fixed q; the straggler pmf only changes at breakpoints."""

    def __init__(self, clients, cfg, consts, K, q):
        self.clients = clients
        self.cfg = cfg
        self.consts = consts
        self.K = K
        self.q = q
        self.visited: List[PositionSolution] = []

    def __call__(self, x: float) -> float:
        solution = evaluate_at_position(self.clients, x, self.cfg, self.consts, self.K, self.q)
        self.visited.append(solution)
        return _phi(solution, self.clients, self.cfg)


@dataclass
class _IntervalScan:
    roots: List[float]
    probes: List[PositionSolution]
    n_probes: int


def _scan_interval(phi: Callable[[float], float], a: float, b: float, opts: PlacementOptions) -> Tuple[
        List[float], int]:
    """Bracket and bisect the sign changes of phi on (a, b).

    With two or more sign changes the probes are refined only around the
    bracket that holds them, and refinement stops once a pass reveals no new
    sign change or the probe budget is spent.
    """
    if b - a <= 4.0 * opts.tol_x:
        return [], 0
    xs = np.linspace(a, b, opts.probes + 2)[1:-1]
    values = np.array([phi(x) for x in xs])
    previous = None
    while True:
        sign = np.sign(values)
        changes = np.flatnonzero(sign[:-1] * sign[1:] < 0)
        if changes.size < 2 or xs.size >= opts.max_probes or (previous is not None and changes.size <= previous):
            break
        previous = changes.size
        lo = max(int(changes[0]) - 1, 0)
        hi = min(int(changes[-1]) + 2, xs.size - 1)
        mids = 0.5 * (xs[lo:hi] + xs[lo + 1:hi + 1])
        mids = mids[:opts.max_probes - xs.size]
        logger.debug(f"phi changes sign {changes.size} times on [{a:.6g}, {b:.6g}]; "
                     f"refining [{xs[lo]:.6g}, {xs[hi]:.6g}] with {mids.size} probes")
        xs = np.concatenate((xs, mids))
        values = np.concatenate((values, [phi(x) for x in mids]))
        order = np.argsort(xs, kind='stable')
        xs, values = xs[order], values[order]

    roots = [float(xs[k]) for k in np.flatnonzero(sign == 0)]
    for k in changes:
        roots.append(float(bisect(phi, xs[k], xs[k + 1], xtol=opts.tol_x, maxiter=200)))
    return roots, int(xs.size)


def _scan_joint(clients, cfg, consts, K, opts, seed, interval) -> _IntervalScan:
    path = _EnvelopePath(clients, cfg, consts, K, opts, seed)
    roots, n = _scan_interval(path, interval[0], interval[1], opts)
    return _IntervalScan(roots=roots, probes=path.visited, n_probes=n)


def _scan_fixed(clients, cfg, consts, K, q, opts, interval) -> _IntervalScan:
    path = _FixedSamplingPath(clients, cfg, consts, K, q)
    roots, n = _scan_interval(path, interval[0], interval[1], opts)
    return _IntervalScan(roots=roots, probes=path.visited, n_probes=n)


def _candidate_positions(partition: BreakpointPartition, scans: Sequence[_IntervalScan],
                         clients: Sequence[ClientProfile], cfg: SystemConfig,
                         extra_positions: Sequence[float]) -> List[Tuple[float, str]]:
    L = cfg.waveguide_len_m
    labelled = [(float(x), 'breakpoint') for x in partition.points]
    labelled += [(float(c.u), 'client') for c in clients if 0.0 <= c.u <= L]
    labelled += [(x, 'root') for scan in scans for x in scan.roots]
    labelled += [(float(np.clip(x, 0.0, L)), 'extra') for x in extra_positions]
    seen = {}
    for x, source in labelled:
        seen.setdefault(x, source)
    return sorted(seen.items())


def _nearest_q(x: float, visited: Sequence[PositionSolution]) -> List[np.ndarray]:
    if not visited:
        return []
    nearest = min(visited, key=lambda s: (abs(s.x - x), s.x))
    return [nearest.q.q]


def _evaluate_candidate(clients, cfg, consts, K, opts: PlacementOptions, seed, visited, baseline_q,
                        item: Tuple[float, str]) -> Tuple[Candidate, Optional[PositionSolution]]:
    x, source = item
    warm = _nearest_q(x, visited)
    if baseline_q is not None:
        warm.append(np.asarray(baseline_q, dtype=float))
    try:
        solution = solve_at_position(clients, x, cfg, consts, K, opts.inner, seed, opts.tie_tol, warm)
    except NumericError as e:
        logger.warning(f"Candidate x={x:.9g} ({source}) failed: {e}")
        return Candidate(x=x, J=math.inf, source=source, converged=False, error=str(e)), None
    return Candidate(x=x, J=solution.J, source=source, converged=solution.converged, q=solution.q.q), solution


def _select(evaluated: Sequence[Tuple[Candidate, Optional[PositionSolution]]]):
    """Smallest finite J; exact ties go to the smaller x."""
    best = None
    for candidate, solution in sorted(evaluated, key=lambda item: item[0].x):
        if solution is None or not math.isfinite(candidate.J):
            continue
        if best is None or candidate.J < best[0].J:
            best = (candidate, solution)
    return best


def _solution_from(best, evaluated, partition, method) -> PlacementSolution:
    candidate, solution = best
    pi = np.empty(solution.profile.n)
    pi[solution.profile.perm] = solution.pi
    return PlacementSolution(
        x_star=candidate.x, q_star=solution.q, J_star=solution.J, f_star=solution.f, g_star=solution.g,
        candidates=tuple(c for c, _ in sorted(evaluated, key=lambda item: item[0].x)),
        straggler_probs=pi, partition=partition, kkt_residual=solution.kkt_residual,
        converged=solution.converged, method=method, position=solution)


def solve_placement(clients: Sequence[ClientProfile], cfg: SystemConfig, consts: ConvergenceConstants, K: int,
                    opts: Optional[PlacementOptions] = None, seed: int = 0, baseline_q=None,
                    extra_positions: Sequence[float] = ()) -> PlacementSolution:
    """Joint placement and participation search over [0, L].

    Args:
        clients: Client profiles
        cfg: Radio configuration
        consts: Convergence constants in the clients' order
        K: Sample size
        opts: Search options
        seed: Seed for the multi-start inner solves
        baseline_q: Optional sampling (client order) added as a start everywhere and evaluated as-is
            at `extra_positions`
        extra_positions: Additional candidate positions

    Returns:
        PlacementSolution with the full candidate log

    Raises:
        DidNotConverge: if no candidate could be evaluated or none reached the inner tolerance
    """
    opts = opts or PlacementOptions()
    partition = find_breakpoints(clients, cfg, opts.tol_x, opts.tol_t, opts.grid_points)

    scan = partial(_scan_joint, clients, cfg, consts, K, opts, seed)
    scans = parallel_map(scan, partition.intervals, opts.jobs)
    visited = [s for result in scans for s in result.probes]
    logger.info(f"Scanned {len(partition.intervals)} intervals with {len(visited)} probes, "
                f"{sum(len(s.roots) for s in scans)} roots of phi")

    items = _candidate_positions(partition, scans, clients, cfg, extra_positions)
    evaluate = partial(_evaluate_candidate, clients, cfg, consts, K, opts, seed, visited, baseline_q)
    evaluated = parallel_map(evaluate, items, opts.jobs)

    evaluated += [(Candidate(x=s.x, J=s.J, source='probe', converged=s.converged, q=s.q.q), s) for s in visited]
    if baseline_q is not None:
        for x in extra_positions:
            fixed = evaluate_at_position(clients, float(np.clip(x, 0.0, cfg.waveguide_len_m)), cfg, consts, K,
                                         baseline_q)
            evaluated.append((Candidate(x=fixed.x, J=fixed.J, source='baseline', converged=True,
                                        q=fixed.q.q), fixed))

    if not any(c.converged for c, s in evaluated if s is not None):
        raise DidNotConverge("no placement candidate reached the inner-solve tolerance")
    best = _select(evaluated)
    if best is None:
        raise DidNotConverge("no placement candidate could be evaluated")
    unconverged = sum(1 for c, _ in evaluated if not c.converged)
    if unconverged:
        logger.warning(f"{unconverged} of {len(evaluated)} candidates did not reach the inner tolerance")
    logger.info(f"Placement optimum x*={best[0].x:.9g} m, J*={best[0].J:.12g} ({best[0].source})")
    return _solution_from(best, evaluated, partition, 'pass_joint')


def solve_fixed_sampling_placement(clients: Sequence[ClientProfile], cfg: SystemConfig,
                                   consts: ConvergenceConstants, K: int, q=None,
                                   opts: Optional[PlacementOptions] = None) -> PlacementSolution:
    """Best position for a fixed sampling (uniform by default); x = 0 is always a candidate."""
    opts = opts or PlacementOptions()
    n = len(clients)
    q = np.full(n, 1.0 / n) if q is None else np.asarray(q, dtype=float)
    partition = find_breakpoints(clients, cfg, opts.tol_x, opts.tol_t, opts.grid_points)
    scans = parallel_map(partial(_scan_fixed, clients, cfg, consts, K, q, opts), partition.intervals, opts.jobs)

    evaluated = []
    for x, source in _candidate_positions(partition, scans, clients, cfg, ()):
        solution = evaluate_at_position(clients, x, cfg, consts, K, q)
        evaluated.append((Candidate(x=x, J=solution.J, source=source, converged=True, q=solution.q.q), solution))
    for scan in scans:
        evaluated += [(Candidate(x=s.x, J=s.J, source='probe', converged=True, q=s.q.q), s) for s in scan.probes]
    return _solution_from(_select(evaluated), evaluated, partition, 'pass_random')


def placement_grid_oracle(clients: Sequence[ClientProfile], cfg: SystemConfig, consts: ConvergenceConstants,
                          K: int, n_grid: int, seed: int = 0, opts: Optional[PlacementOptions] = None
                          ) -> List[PositionSolution]:
    """Fresh multi-start inner solve on a uniform grid of n_grid positions over [0, L]."""
    if n_grid < 2:
        raise InvalidParams("n_grid must be >= 2")
    opts = opts or PlacementOptions()
    xs = np.linspace(0.0, cfg.waveguide_len_m, n_grid)
    solve = partial(_grid_point, clients, cfg, consts, K, opts, seed)
    return parallel_map(solve, [float(x) for x in xs], opts.jobs)


def _grid_point(clients, cfg, consts, K, opts: PlacementOptions, seed, x) -> PositionSolution:
    return solve_at_position(clients, x, cfg, consts, K, opts.inner, seed, opts.tie_tol)
