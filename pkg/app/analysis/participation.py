"""
Participation problem at a fixed antenna position.

Minimizes J(q) = f(q) g(q) over the probability simplex, checks the KKT
structure of the result, and handles the latency-class reduction and the
scalar fast/slow problem used by the phase-transition analysis.

All vectors here are in sorted-client (latency) order unless stated otherwise.
"""
import logging
import math
from functools import partial
from typing import NamedTuple, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.optimize import brentq, minimize_scalar
from scipy.special import expit

from app.analysis.convergence import convergence_factor, wallclock_objective
from app.analysis.order_stats import expected_straggler, sort_by_latency, straggler_pmf, tail_sensitivity
from app.config import DEFAULT_TIE_TOL
from app.errors import (DeltaOutOfRange, DidNotConverge, DimensionMismatch, IndexOutOfRange, InvalidMargin,
                        InvalidProblem, NonPositiveWeight)
from app.models.base import ClientProfile, ConvergenceConstants, SystemConfig
from app.models.sampling import (ClassPartition, ClassSolution, InnerSolution, InnerSolveOptions, KKTReport,
                                 LatencyProfile, PositionSolution, SamplingDistribution, TwoClassProblem,
                                 TwoClassSolution)
from app.parallel import parallel_map, stream

logger = logging.getLogger(__name__)

# Relative J difference under which two multi-start outcomes count as tied
_TIE_REL = 1e-12
_MAX_BACKTRACKS = 60
# Newton steps close to the optimum may leave J unchanged up to rounding
_ROUNDING = 4.0 * np.finfo(float).eps

# Logit scan of the two-class objective, delta in (1e-8, 1 - 1e-8)
_LOGIT_BOUND = 18.42
_LOGIT_POINTS = 4001


def project_to_simplex(v: np.ndarray, total: float = 1.0) -> np.ndarray:
    """Euclidean projection of v onto {x >= 0, sum x = total} (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - total
    k = np.arange(1, v.size + 1)
    active = u - css / k > 0
    rho = k[active][-1]
    theta = css[active][-1] / rho
    return np.maximum(v - theta, 0.0)


def _project_floored(v: np.ndarray, floor: float) -> np.ndarray:
    return project_to_simplex(v - floor, 1.0 - v.size * floor) + floor


def sqrt_rule(c) -> SamplingDistribution:
    """Statistics-only sampling q_i proportional to sqrt(c_i).

    Raises:
        NonPositiveWeight: if any weight is not strictly positive
    """
    c = np.asarray(c, dtype=float)
    if c.size == 0 or np.any(~(c > 0)):
        raise NonPositiveWeight("square-root rule needs strictly positive weights")
    root = np.sqrt(c)
    return SamplingDistribution.from_probs(root / math.fsum(root))


class _SimplexObjective:
    """J(q) = f(q) g(q) on raw arrays, with exact gradient and Hessian."""

    def __init__(self, sorted_t: np.ndarray, c: np.ndarray, omega: float, nu: float, K: int):
        self.t = np.asarray(sorted_t, dtype=float)
        self.gaps = np.diff(self.t)
        self.c = np.asarray(c, dtype=float)
        self.omega = omega
        self.nu = nu
        self.K = K
        self.n = self.t.size
        idx = np.arange(self.n)
        self._outer = np.maximum.outer(idx, idx)

    def _inner_cum(self, q: np.ndarray) -> np.ndarray:
        return np.cumsum(q)[:-1]

    def parts(self, q: np.ndarray):
        f = self.t[-1] - math.fsum(self.gaps * np.power(self._inner_cum(q), self.K))
        g = self.omega * math.fsum(self.c / q) + self.nu
        return f, g

    def value(self, q: np.ndarray) -> float:
        f, g = self.parts(q)
        return f * g

    def _tail(self, q: np.ndarray, power: int) -> np.ndarray:
        w = self.gaps * np.power(self._inner_cum(q), power)
        return np.concatenate((np.cumsum(w[::-1])[::-1], [0.0]))

    def gradient(self, q: np.ndarray):
        f, g = self.parts(q)
        grad_f = -self.K * self._tail(q, self.K - 1)
        grad_g = -self.omega * self.c / np.square(q)
        return f * g, g * grad_f + f * grad_g, (f, g, grad_f, grad_g)

    def hessian(self, q: np.ndarray, cache) -> np.ndarray:
        f, g, grad_f, grad_g = cache
        hess_g = np.diag(2.0 * self.omega * self.c / np.power(q, 3))
        if self.K >= 2:
            hess_f = -self.K * (self.K - 1) * self._tail(q, self.K - 2)[self._outer]
        else:
            hess_f = np.zeros((self.n, self.n))
        cross = np.outer(grad_f, grad_g)
        return g * hess_f + f * hess_g + cross + cross.T

    @staticmethod
    def residual(grad: np.ndarray) -> float:
        """Max-norm of the projected gradient grad - mean(grad), scaled by the mean multiplier -mean(grad).

        grad_tol applies to this value.
        """
        lam = -grad
        mean = float(np.mean(lam))
        if not mean > 0:
            return math.inf
        return float(np.max(np.abs(lam - mean))) / mean


def _newton_direction(hess: np.ndarray, grad: np.ndarray) -> Optional[np.ndarray]:
    n = grad.size
    system = np.zeros((n + 1, n + 1))
    system[:n, :n] = hess
    system[:n, n] = 1.0
    system[n, :n] = 1.0
    try:
        solution = np.linalg.solve(system, np.concatenate((-grad, [0.0])))
    except np.linalg.LinAlgError:
        return None
    d = solution[:n]
    if not np.all(np.isfinite(d)):
        return None
    if not (grad @ d < 0 and d @ hess @ d > 0):
        return None
    return d - d.mean()


def _descend(obj: _SimplexObjective, start: np.ndarray, opts: InnerSolveOptions):
    """Run one start to a KKT point. Returns (q, J, residual, iterations)."""
    floor = opts.floor_eps
    q = _project_floored(np.asarray(start, dtype=float), floor)
    J, grad, cache = obj.gradient(q)
    residual = obj.residual(grad)
    step_memory = None
    iterations = 0

    while iterations < opts.max_iters and residual > opts.grad_tol:
        iterations += 1
        accepted = False

        direction = _newton_direction(obj.hessian(q, cache), grad) if opts.newton else None
        if direction is not None:
            shrinking = direction < 0
            alpha = 1.0
            if np.any(shrinking):
                alpha = min(1.0, 0.99 * float(np.min((q[shrinking] - floor) / -direction[shrinking])))
            slope = float(grad @ direction)
            for _ in range(_MAX_BACKTRACKS):
                trial = q + alpha * direction
                trial = trial / math.fsum(trial)
                if np.all(trial >= floor):
                    J_trial = obj.value(trial)
                    if J_trial <= J + opts.armijo * alpha * slope + _ROUNDING * abs(J):
                        q, accepted = trial, True
                        break
                alpha *= opts.shrink

        if not accepted:
            projected = grad - grad.mean()
            scale = float(np.max(np.abs(projected)))
            if scale == 0.0:
                break
            step = step_memory if step_memory is not None else opts.initial_step * float(np.max(q)) / scale
            for _ in range(_MAX_BACKTRACKS):
                trial = _project_floored(q - step * grad, floor)
                decrease = float(grad @ (trial - q))
                if decrease < 0 and obj.value(trial) <= J + opts.armijo * decrease:
                    q, accepted = trial, True
                    step_memory = step / opts.shrink
                    break
                step *= opts.shrink

        if not accepted:
            break
        J, grad, cache = obj.gradient(q)
        residual = obj.residual(grad)

    return q, J, residual, iterations


def _starts(c: np.ndarray, n_starts: int, seed: int, extra_starts: Sequence[np.ndarray]):
    base = np.sqrt(c) / math.fsum(np.sqrt(c))
    starts = [base] + [np.asarray(s, dtype=float) for s in extra_starts]
    rng = stream(seed, 0)
    for _ in range(n_starts - 1):
        starts.append(0.5 * base + 0.5 * rng.dirichlet(np.ones(c.size)))
    return starts


def _multistart(sorted_t, c, omega, nu, K, opts: InnerSolveOptions, seed: int,
                extra_starts: Sequence[np.ndarray] = ()):
    c = np.asarray(c, dtype=float)
    if c.size != np.asarray(sorted_t).size:
        raise DimensionMismatch(f"{c.size} weights for {np.asarray(sorted_t).size} latencies")
    if np.any(~(c > 0)):
        raise NonPositiveWeight("the participation problem needs strictly positive weights c_i")
    if c.size == 1:
        return np.ones(1), 0.0, True, 0, 0
    opts.check_dimension(c.size)

    obj = _SimplexObjective(sorted_t, c, omega, nu, K)
    best = None
    for index, start in enumerate(_starts(c, opts.n_starts, seed, extra_starts)):
        q, J, residual, iterations = _descend(obj, start, opts)
        converged = residual <= opts.grad_tol
        logger.debug(f"Start {index}: J={J:.12g}, residual={residual:.2e}, iterations={iterations}")
        if best is None:
            best = (q, J, residual, converged, index, iterations)
            continue
        # converged points beat unconverged ones; ties in J keep the earlier start
        if converged and not best[3]:
            better = J <= best[1] * (1.0 + _TIE_REL)
        elif best[3] and not converged:
            better = J < best[1] * (1.0 - _TIE_REL)
        else:
            better = J < best[1] * (1.0 - _TIE_REL)
        if better:
            best = (q, J, residual, converged, index, iterations)
    q, _, residual, converged, index, iterations = best
    return q, residual, converged, index, iterations


def solve_inner(prof: LatencyProfile, c, consts: ConvergenceConstants, K: int,
                opts: Optional[InnerSolveOptions] = None, seed: int = 0,
                extra_starts: Sequence[np.ndarray] = ()) -> InnerSolution:
    """Multi-start minimization of J(q) over the simplex at a fixed position.

    Args:
        prof: Latency profile (sorted order)
        c: Statistical weights in sorted order
        consts: Supplies omega and nu
        K: Sample size
        opts: Solver options
        seed: Seed for the perturbed starts
        extra_starts: Additional starting points (sorted order), tried after the square-root start

    Returns:
        InnerSolution; `converged` is False when no start reached the tolerance.
        `kkt_residual` is max|P_T grad J| / mean(-grad J) at the returned point
    """
    opts = opts or InnerSolveOptions()
    c = np.asarray(c, dtype=float)
    q, residual, converged, index, iterations = _multistart(
        prof.sorted_t, c, consts.omega, consts.nu, K, opts, seed, extra_starts)
    dist = SamplingDistribution.from_probs(q)
    sorted_consts = ConvergenceConstants(omega=consts.omega, nu=consts.nu, c=c)
    J = wallclock_objective(dist, prof, K, sorted_consts)
    if not converged:
        logger.warning(f"Inner solve did not reach tolerance: residual {residual:.3e} > {opts.grad_tol:.1e}")
    return InnerSolution(q=dist, J=J, kkt_residual=residual, converged=converged,
                         start_index=index, iterations=iterations)


def kkt_report(q: SamplingDistribution, prof: LatencyProfile, c, consts: ConvergenceConstants,
               K: int) -> KKTReport:
    """Per-client multipliers, their spread, the adjacent-index recursion residuals and psi = c / q^2."""
    c = np.asarray(c, dtype=float)
    if c.size != q.n:
        raise DimensionMismatch(f"{c.size} weights for {q.n} probabilities")
    f = expected_straggler(q, prof, K)
    g = convergence_factor(q, ConvergenceConstants(omega=consts.omega, nu=consts.nu, c=c))
    D = tail_sensitivity(q, prof, K)
    psi = c / np.square(q.q)
    lambdas = f * consts.omega * psi + g * D
    spread = float((np.max(lambdas) - np.min(lambdas)) / np.mean(lambdas))
    premium = (g / (f * consts.omega)) * K * prof.gaps * np.power(q.cum[1:-1], K - 1)
    residuals = np.diff(psi) - premium
    return KKTReport(lambdas=lambdas, lambda_spread=spread, recursion_residuals=residuals, psi=psi)


def tail_premium(prof: LatencyProfile, q: SamplingDistribution, i: int, consts: ConvergenceConstants,
                 K: int) -> float:
    """Tail-latency premium (g / f omega) K Delta_i Q_i^{K-1} of gap i (0-based, between clients i and i+1).

    consts.c must be in sorted order.
    """
    if not 0 <= i < prof.n - 1:
        raise IndexOutOfRange(f"gap index {i} outside [0, {prof.n - 2}]")
    f = expected_straggler(q, prof, K)
    g = convergence_factor(q, consts)
    return (g / (f * consts.omega)) * K * float(prof.gaps[i]) * float(q.cum[i + 1]) ** (K - 1)


def class_partition(prof: LatencyProfile, c, tie_tol: float = DEFAULT_TIE_TOL) -> ClassPartition:
    """Group adjacent sorted clients whose latencies differ by at most tie_tol."""
    if not tie_tol >= 0:
        raise InvalidProblem("tie_tol must be >= 0")
    sqrt_c = np.sqrt(np.asarray(c, dtype=float))
    if sqrt_c.size != prof.n:
        raise DimensionMismatch(f"{sqrt_c.size} weights for {prof.n} latencies")
    cuts = np.flatnonzero(prof.gaps > tie_tol) + 1
    classes = tuple(np.split(np.arange(prof.n), cuts))
    class_times = np.array([prof.sorted_t[members[-1]] for members in classes])
    class_weights = np.array([math.fsum(sqrt_c[members]) for members in classes])
    return ClassPartition(classes=classes, class_times=class_times, class_weights=class_weights,
                          sqrt_c=sqrt_c)


def expand_classes(part: ClassPartition, deltas) -> SamplingDistribution:
    """Square-root law within each class: q_i = delta_m sqrt(c_i) / C_m."""
    deltas = np.asarray(deltas, dtype=float)
    q = np.empty(part.n)
    for delta, members, weight in zip(deltas, part.classes, part.class_weights):
        q[members] = delta * part.sqrt_c[members] / weight
    return SamplingDistribution.from_probs(q)


def solve_class_reduced(part: ClassPartition, consts: ConvergenceConstants, K: int,
                        opts: Optional[InnerSolveOptions] = None, seed: int = 0,
                        extra_starts: Sequence[np.ndarray] = ()) -> ClassSolution:
    """Solve the M-dimensional class problem and expand it back to clients."""
    opts = opts or InnerSolveOptions()
    reduced_c = np.square(part.class_weights)
    reduced = LatencyProfile.from_sorted(part.class_times)
    deltas, residual, converged, _, _ = _multistart(
        reduced.sorted_t, reduced_c, consts.omega, consts.nu, K, opts, seed, extra_starts)
    delta_dist = SamplingDistribution.from_probs(deltas)
    J = wallclock_objective(delta_dist, reduced, K,
                            ConvergenceConstants(omega=consts.omega, nu=consts.nu, c=reduced_c))
    if not converged:
        logger.warning(f"Class-reduced solve did not reach tolerance: residual {residual:.3e}")
    return ClassSolution(deltas=delta_dist, q=expand_classes(part, delta_dist.q), J=J,
                         kkt_residual=residual, converged=converged)


def _two_class_parts(p: TwoClassProblem, delta):
    f = p.t_s - p.gap * np.power(1.0 - delta, p.K)
    g = p.omega * (p.C_f ** 2 / (1.0 - delta) + p.C_s ** 2 / delta) + p.nu
    return f, g


def two_class_objective(p: TwoClassProblem, delta: float) -> float:
    """J(delta) = [t_s - Delta (1 - delta)^K] [omega (C_f^2 / (1 - delta) + C_s^2 / delta) + nu]."""
    if not 0.0 < delta < 1.0:
        raise DeltaOutOfRange(f"delta must lie in (0, 1), got {delta}")
    f, g = _two_class_parts(p, delta)
    return float(f * g)


def two_class_stationarity(p: TwoClassProblem, delta: float) -> float:
    """dJ/ddelta; zero at interior stationary points."""
    f, g = _two_class_parts(p, delta)
    df = p.gap * p.K * (1.0 - delta) ** (p.K - 1)
    dg = p.omega * (p.C_f ** 2 / (1.0 - delta) ** 2 - p.C_s ** 2 / delta ** 2)
    return float(df * g + f * dg)


def solve_two_class(p: TwoClassProblem, tol: float = 1e-9) -> TwoClassSolution:
    """Global scalar minimization of J(delta).

    A logit-spaced scan locates the best basin, a bounded scalar search refines
    it, and a root polish on dJ/ddelta is kept when it improves J.

    Raises:
        DidNotConverge: if |J'(delta*)| / J(delta*) stays above tol
    """
    if not p.C_s > 0:
        raise InvalidProblem("the two-class solver needs C_s > 0")
    z = np.linspace(-_LOGIT_BOUND, _LOGIT_BOUND, _LOGIT_POINTS)
    grid = expit(z)
    f, g = _two_class_parts(p, grid)
    k = int(np.argmin(f * g))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]

    objective = partial(two_class_objective, p)
    result = minimize_scalar(objective, bounds=(lo, hi), method='bounded', options={'xatol': 1e-15})
    candidates = [float(grid[k]), float(result.x)]

    derivative = partial(two_class_stationarity, p)
    d_lo, d_hi = derivative(lo), derivative(hi)
    if d_lo < 0 < d_hi:
        candidates.append(brentq(derivative, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200))

    delta = min(candidates, key=lambda d: (objective(d), abs(derivative(d))))
    J = objective(delta)
    residual = abs(derivative(delta)) / abs(J)
    if residual > tol:
        raise DidNotConverge(f"two-class stationarity residual {residual:.3e} exceeds {tol:.1e}")
    return TwoClassSolution(delta=delta, objective=J, stationarity_residual=residual)


class ThresholdCheck(NamedTuple):
    satisfied: bool
    lhs: float
    rhs: float


def collapse_threshold(p: TwoClassProblem, rho: float, xi: float) -> ThresholdCheck:
    """Check C_s^2 against the participation-collapse threshold at this K.

    rhs = (1 - xi)(rho / K) Delta P / (t_s - Delta P) (omega C_f^2 + nu) / omega,
    with P = (1 - rho / K)^K.
    """
    if not 0.0 < xi < 1.0:
        raise InvalidMargin(f"margin xi must lie in (0, 1), got {xi}")
    if not 0.0 < rho <= p.K:
        raise InvalidMargin(f"rho must lie in (0, K], got {rho}")
    P = (1.0 - rho / p.K) ** p.K
    denominator = p.t_s - p.gap * P
    if not denominator > 0:
        raise InvalidMargin("Delta * P must be smaller than t_s")
    rhs = ((1.0 - xi) * (rho / p.K) * p.gap * P / denominator
           * (p.omega * p.C_f ** 2 + p.nu) / p.omega)
    lhs = p.C_s ** 2
    return ThresholdCheck(satisfied=lhs <= rhs, lhs=lhs, rhs=rhs)


def _with(p: TwoClassProblem, **changes) -> TwoClassProblem:
    values = dict(t_f=p.t_f, t_s=p.t_s, C_f=p.C_f, C_s=p.C_s, omega=p.omega, nu=p.nu, K=p.K)
    values.update(changes)
    return TwoClassProblem(**values)


def _sweep_cell(template: TwoClassProblem, tol: float, rho: float, xi: float,
                threshold_fraction: Optional[float], K: int) -> dict:
    p = _with(template, K=int(K))
    if threshold_fraction is not None:
        rhs = collapse_threshold(_with(p, C_s=0.0), rho, xi).rhs
        p = _with(p, C_s=math.sqrt(threshold_fraction * rhs))
    solution = solve_two_class(p, tol)
    check = collapse_threshold(p, rho, xi)
    return {
        'K': p.K,
        'C_s': p.C_s,
        'delta_star': solution.delta,
        'K_delta_star': p.K * solution.delta,
        'ratio_stat': solution.delta / p.stat_split,
        'threshold': bool(check.satisfied),
    }


def phase_transition_sweep(template: TwoClassProblem, Ks: Sequence[int], tol: float = 1e-9,
                           rho: float = 1.0, xi: float = 0.5, threshold_fraction: Optional[float] = None,
                           jobs: int = 1) -> pd.DataFrame:
    """Solve the two-class problem for each K and report the slow-class diagnostics.

    With `threshold_fraction`, C_s^2 is set to that fraction of the collapse
    threshold at each K instead of the template's fixed C_s.
    """
    if len(Ks) == 0:
        raise InvalidProblem("the K sweep is empty")
    if threshold_fraction is not None and not 0.0 < threshold_fraction <= 1.0:
        raise InvalidProblem("threshold_fraction must lie in (0, 1]")
    cell = partial(_sweep_cell, template, tol, rho, xi, threshold_fraction)
    rows = parallel_map(cell, [int(K) for K in Ks], jobs)
    return pd.DataFrame(rows, columns=['K', 'C_s', 'delta_star', 'K_delta_star', 'ratio_stat', 'threshold'])


def solve_at_position(clients: Sequence[ClientProfile], x: float, cfg: SystemConfig,
                      consts: ConvergenceConstants, K: int, opts: Optional[InnerSolveOptions] = None,
                      seed: int = 0, tie_tol: float = DEFAULT_TIE_TOL,
                      warm_starts: Sequence[np.ndarray] = ()) -> PositionSolution:
    """Sort clients at x, solve the participation problem and map it back to client order.

    Tied latencies are solved through the class reduction. `consts` and
    `warm_starts` are in the caller's client order.
    """
    opts = opts or InnerSolveOptions()
    prof = sort_by_latency(clients, x, cfg)
    sorted_consts = consts.reordered(prof.perm)
    c = sorted_consts.c
    part = class_partition(prof, c, tie_tol)
    note = None

    if part.m < prof.n:
        class_starts = [np.array([math.fsum(np.asarray(w)[prof.perm][m]) for m in part.classes])
                        for w in warm_starts]
        solution = solve_class_reduced(part, consts, K, opts, seed, class_starts)
        q_sorted = solution.q
        residual, converged, start_index = solution.kkt_residual, solution.converged, 0
        note = f"class-reduced ({part.m} classes)"
    else:
        sorted_starts = [np.asarray(w, dtype=float)[prof.perm] for w in warm_starts]
        solution = solve_inner(prof, c, consts, K, opts, seed, sorted_starts)
        q_sorted = solution.q
        residual, converged, start_index = solution.kkt_residual, solution.converged, solution.start_index

    q = np.empty(prof.n)
    q[prof.perm] = q_sorted.q
    f = expected_straggler(q_sorted, prof, K)
    g = convergence_factor(q_sorted, sorted_consts)
    return PositionSolution(
        x=float(x), profile=prof, q_sorted=q_sorted, q=SamplingDistribution.from_probs(q),
        J=f * g, f=f, g=g, pi=straggler_pmf(q_sorted, prof, K), kkt_residual=residual,
        converged=converged, n_classes=part.m, start_index=start_index, note=note)


def evaluate_at_position(clients: Sequence[ClientProfile], x: float, cfg: SystemConfig,
                         consts: ConvergenceConstants, K: int, q) -> PositionSolution:
    """f, g and J of a fixed sampling q (caller's client order) at position x, without optimizing."""
    prof = sort_by_latency(clients, x, cfg)
    sorted_consts = consts.reordered(prof.perm)
    q = SamplingDistribution.from_probs(q)
    q_sorted = SamplingDistribution.from_probs(q.q[prof.perm])
    f = expected_straggler(q_sorted, prof, K)
    g = convergence_factor(q_sorted, sorted_consts)
    report = kkt_report(q_sorted, prof, sorted_consts.c, consts, K)
    residual = float(np.max(np.abs(report.lambdas - report.lambdas.mean())) / report.lambdas.mean())
    return PositionSolution(
        x=float(x), profile=prof, q_sorted=q_sorted, q=q, J=f * g, f=f, g=g,
        pi=straggler_pmf(q_sorted, prof, K), kkt_residual=residual, converged=True,
        n_classes=prof.n, note='fixed sampling')
