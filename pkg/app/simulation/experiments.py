"""
Experiment suites.

Each suite is a pure function of (scenario, seed, options) returning pandas
tables whose rows are in a fixed order. Sweep cells are evaluated through
`parallel_map`, so `jobs` never changes the output.
"""
import logging
import math
from dataclasses import dataclass, replace
from functools import partial
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import spearmanr

from app.analysis.convergence import scenario_constants
from app.analysis.geometry_link import geometry_heuristic, latency_matrix
from app.analysis.order_stats import monte_carlo_straggler
from app.analysis.participation import (evaluate_at_position, phase_transition_sweep, solve_at_position,
                                        solve_two_class)
from app.analysis.placement import (find_breakpoints, placement_grid_oracle, solve_fixed_sampling_placement,
                                    solve_placement)
from app.config import DEFAULT_COMP_RANGE, VERIFY_DRAWS
from app.errors import InvalidParams
from app.models.base import Scenario
from app.models.placement import PlacementOptions
from app.models.sampling import PositionSolution, TwoClassProblem
from app.parallel import derive_seed, parallel_map
from app.simulation.rounds import simulate_rounds
from app.simulation.synthetic_fl import FLSettings, build_task, run_fedavg

logger = logging.getLogger(__name__)

METHODS = ('conventional', 'pass_random', 'pass_joint')
CCDF_METHODS = ('conventional', 'pass_optimized', 'pass_joint')

TRADEOFF_COLUMNS = ['method', 'K', 'x', 'f', 'g', 'J']
CCDF_COLUMNS = ['method', 't', 'ccdf']
TAIL_PREMIUM_COLUMNS = ['K', 'Delta', 'delta_star', 'premium', 'premium_scaled', 'psi_gap', 'P_at_least_one_slow']
PHASE_COLUMNS = ['K', 'C_s', 'delta_star', 'K_delta_star', 'ratio_stat', 'threshold']
FL_COLUMNS = ['replicate', 'method', 'x', 'J', 'rounds_to_eps', 'wallclock_to_eps', 'gap_at_deadline']


@dataclass(frozen=True, eq=False)
class MethodPoint:
    method: str
    K: int
    solution: PositionSolution


def _serial(opts: Optional[PlacementOptions]) -> PlacementOptions:
    opts = opts or PlacementOptions()
    return replace(opts, jobs=1) if opts.jobs != 1 else opts


def method_points(scn: Scenario, K: int, opts: Optional[PlacementOptions] = None, seed: int = 0
                  ) -> List[MethodPoint]:
    """Conventional (x = 0, uniform q), PASS-Random (best x for uniform q) and PASS-Joint (x*, q*).

    The joint search also evaluates the uniform sampling at the PASS-Random
    position, so the three objective values are nested exactly.
    """
    opts = opts or PlacementOptions()
    clients, cfg, consts = scn.clients, scn.cfg, scenario_constants(scn, K)
    uniform = np.full(scn.n_clients, 1.0 / scn.n_clients)

    conventional = evaluate_at_position(clients, 0.0, cfg, consts, K, uniform)
    pass_random = solve_fixed_sampling_placement(clients, cfg, consts, K, uniform, opts)
    joint = solve_placement(clients, cfg, consts, K, opts, seed, baseline_q=uniform,
                            extra_positions=[pass_random.x_star])
    logger.info(f"K={K}: J conventional={conventional.J:.9g}, random={pass_random.J_star:.9g}, "
                f"joint={joint.J_star:.9g}")
    return [MethodPoint('conventional', K, conventional), MethodPoint('pass_random', K, pass_random.position),
            MethodPoint('pass_joint', K, joint.position)]


def _row(point: MethodPoint) -> dict:
    s = point.solution
    return {'method': point.method, 'K': point.K, 'x': s.x, 'f': s.f, 'g': s.g, 'J': s.J}


def _verify(frame: pd.DataFrame, points: Sequence[MethodPoint], seed: int, jobs: int) -> pd.DataFrame:
    """Append Monte Carlo estimates f_mc and their z-scores f_z against the analytic f."""
    f_mc, f_z = [], []
    for index, point in enumerate(points):
        s = point.solution
        estimate, stderr = monte_carlo_straggler(s.q_sorted, s.profile, point.K, VERIFY_DRAWS,
                                                 derive_seed(seed, 7, index), jobs)
        f_mc.append(estimate)
        f_z.append((estimate - s.f) / stderr if stderr > 0 else 0.0)
    frame = frame.copy()
    frame['f_mc'] = f_mc
    frame['f_z'] = f_z
    return frame


def _tradeoff_cell(scn: Scenario, opts: PlacementOptions, seed: int, K: int) -> List[MethodPoint]:
    return method_points(scn, K, opts, seed)


def tradeoff_experiment(scn: Scenario, Ks: Sequence[int], opts: Optional[PlacementOptions] = None, seed: int = 0,
                        jobs: int = 1, verify: bool = False) -> pd.DataFrame:
    """Analytic (f, g, J) of the three methods for each K."""
    if len(Ks) == 0:
        raise InvalidParams("the K sweep is empty")
    cells = parallel_map(partial(_tradeoff_cell, scn, _serial(opts), seed), [int(K) for K in Ks], jobs)
    points = [p for cell in cells for p in cell]
    frame = pd.DataFrame([_row(p) for p in points], columns=TRADEOFF_COLUMNS)
    return _verify(frame, points, seed, jobs) if verify else frame


def fast_fraction_variant(scn: Scenario, fraction: float, mode: str = 'count',
                          comp_range=DEFAULT_COMP_RANGE) -> Scenario:
    """Scenario copy whose fast clients get the minimum compute time and the rest the maximum.

    mode='count' makes round(fraction * N) clients fast (in client order);
    mode='mass' adds clients in order until their aggregation weight reaches the fraction.
    """
    if not 0.0 < fraction < 1.0:
        raise InvalidParams(f"fast fraction must lie in (0, 1), got {fraction}")
    n = scn.n_clients
    if mode == 'count':
        n_fast = min(max(int(math.floor(fraction * n + 0.5)), 1), max(n - 1, 1))
        fast = set(range(n_fast))
    elif mode == 'mass':
        fast, mass = set(), 0.0
        for index, client in enumerate(scn.clients):
            if mass >= fraction:
                break
            fast.add(index)
            mass += client.agg_weight
    else:
        raise InvalidParams(f"unknown fraction mode '{mode}' (expected 'count' or 'mass')")
    clients = tuple(replace(c, compute_time=comp_range[0] if i in fast else comp_range[1])
                    for i, c in enumerate(scn.clients))
    return replace(scn, clients=clients)


def k_decomposition_experiment(scn: Scenario, Ks: Sequence[int], fractions: Sequence[float] = (0.25, 0.35, 0.45),
                               fraction_mode: str = 'count', opts: Optional[PlacementOptions] = None,
                               seed: int = 0, jobs: int = 1, verify: bool = False,
                               comp_range=DEFAULT_COMP_RANGE) -> pd.DataFrame:
    """f, g and J of each method versus K, for several fast-class fractions."""
    frames = []
    for fraction in fractions:
        variant = fast_fraction_variant(scn, fraction, fraction_mode, comp_range)
        frame = tradeoff_experiment(variant, Ks, opts, seed, jobs, verify)
        frame.insert(0, 'fast_fraction', fraction)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def empirical_ccdf(times: np.ndarray) -> pd.DataFrame:
    """P(T > t) at each distinct observed t, led by the row (0, 1)."""
    values, counts = np.unique(np.asarray(times, dtype=float), return_counts=True)
    survival = (times.size - np.cumsum(counts)) / times.size
    return pd.DataFrame({'t': np.concatenate(([0.0], values)), 'ccdf': np.concatenate(([1.0], survival))})


def ccdf_experiment(scn: Scenario, R: int, seed: int, K: Optional[int] = None,
                    opts: Optional[PlacementOptions] = None) -> pd.DataFrame:
    """Empirical round-time CCDF for conventional, PASS-optimized (x*, uniform q) and PASS-joint (x*, q*)."""
    K = scn.cfg.sample_size if K is None else K
    uniform = np.full(scn.n_clients, 1.0 / scn.n_clients)
    joint = solve_placement(scn.clients, scn.cfg, scenario_constants(scn, K), K, opts, seed)
    settings = {
        'conventional': (0.0, uniform),
        'pass_optimized': (joint.x_star, uniform),
        'pass_joint': (joint.x_star, joint.q_star.q),
    }
    rounds_seed = derive_seed(seed, 1)
    frames = []
    for method in CCDF_METHODS:
        x, q = settings[method]
        trace = simulate_rounds(scn, q, x, R, rounds_seed, K)
        frame = empirical_ccdf(trace.straggler_times)
        frame.insert(0, 'method', method)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)[CCDF_COLUMNS]


def _premium_cell(template: TwoClassProblem, tol: float, cell) -> dict:
    K, delta_gap = cell
    p = TwoClassProblem(t_f=template.t_f, t_s=template.t_f + delta_gap, C_f=template.C_f, C_s=template.C_s,
                        omega=template.omega, nu=template.nu, K=int(K))
    solution = solve_two_class(p, tol)
    d = solution.delta
    f = p.t_s - p.gap * (1.0 - d) ** p.K
    g = p.omega * (p.C_f ** 2 / (1.0 - d) + p.C_s ** 2 / d) + p.nu
    premium = p.K * p.gap * (1.0 - d) ** (p.K - 1)
    return {
        'K': p.K,
        'Delta': delta_gap,
        'delta_star': d,
        'premium': premium,
        'premium_scaled': g / (f * p.omega) * premium,
        'psi_gap': p.C_s ** 2 / d ** 2 - p.C_f ** 2 / (1.0 - d) ** 2,
        'P_at_least_one_slow': 1.0 - (1.0 - d) ** p.K,
    }


def tail_premium_experiment(template: TwoClassProblem, Deltas: Sequence[float], Ks: Sequence[int],
                            tol: float = 1e-9, jobs: int = 1) -> pd.DataFrame:
    """Two-class optimum versus latency gap and K. The template's t_s is ignored; t_s = t_f + Delta."""
    if len(Deltas) == 0 or len(Ks) == 0:
        raise InvalidParams("Delta and K sweeps must be nonempty")
    cells = [(int(K), float(d)) for K in Ks for d in Deltas]
    rows = parallel_map(partial(_premium_cell, template, tol), cells, jobs)
    return pd.DataFrame(rows, columns=TAIL_PREMIUM_COLUMNS)


def phase_transition_experiment(template: TwoClassProblem, Ks: Sequence[int],
                                C_s_values: Sequence[float] = (), threshold_fractions: Sequence[float] = (),
                                rho: float = 1.0, xi: float = 0.5, tol: float = 1e-9,
                                jobs: int = 1) -> pd.DataFrame:
    """Slow-class mass versus K for fixed C_s values and for C_s^2 pinned to fractions of the threshold."""
    if not C_s_values and not threshold_fractions:
        C_s_values = (template.C_s,)
    frames = []
    for C_s in C_s_values:
        fixed = TwoClassProblem(t_f=template.t_f, t_s=template.t_s, C_f=template.C_f, C_s=float(C_s),
                                omega=template.omega, nu=template.nu, K=template.K)
        frames.append(phase_transition_sweep(fixed, Ks, tol, rho, xi, jobs=jobs))
    for fraction in threshold_fractions:
        frames.append(phase_transition_sweep(template, Ks, tol, rho, xi, threshold_fraction=fraction, jobs=jobs))
    return pd.concat(frames, ignore_index=True)[PHASE_COLUMNS]


def breakpoint_experiment(scn: Scenario, K: int, n_grid: int = 201, opts: Optional[PlacementOptions] = None,
                          seed: int = 0, jobs: int = 1, verify: bool = False) -> Dict[str, pd.DataFrame]:
    """Latency curves, J*(x) on a grid, the breakpoints, and the optimum found by each placement rule.

    Returns:
        {'profile': ..., 'points': ..., 'summary': ...}
    """
    opts = opts or PlacementOptions()
    serial = _serial(opts)
    clients, cfg, consts = scn.clients, scn.cfg, scenario_constants(scn, K)
    ids = [c.id for c in clients]

    grid = placement_grid_oracle(clients, cfg, consts, K, n_grid, seed, replace(serial, jobs=jobs))
    xs = np.array([s.x for s in grid])
    T = latency_matrix(clients, xs, cfg)
    profile = pd.DataFrame({'x': xs})
    for row, cid in zip(T, ids):
        profile[f't_{cid}'] = row
    profile['J_star'] = [s.J for s in grid]

    partition = find_breakpoints(clients, cfg, opts.tol_x, opts.tol_t, opts.grid_points)
    points = pd.DataFrame([{'x': b.x, 'i': ids[b.i], 'j': ids[b.j], 'kind': b.kind} for b in partition.breakpoints],
                          columns=['x', 'i', 'j', 'kind'])

    joint = solve_placement(clients, cfg, consts, K, serial, seed)
    best_grid = min(grid, key=lambda s: (s.J, s.x))
    results = [
        MethodPoint('pass_search', K, solve_at_position(clients, joint.x_star, cfg, consts, K, opts.inner, seed,
                                                        opts.tie_tol, [joint.q_star.q])),
        MethodPoint('grid', K, best_grid),
        MethodPoint('geometry', K, solve_at_position(clients, geometry_heuristic(clients, cfg), cfg, consts, K,
                                                     opts.inner, seed, opts.tie_tol)),
        MethodPoint('conventional', K, solve_at_position(clients, 0.0, cfg, consts, K, opts.inner, seed,
                                                         opts.tie_tol)),
    ]
    rows = []
    for point in results:
        row = _row(point)
        del row['K']
        pi = np.empty(len(clients))
        pi[point.solution.profile.perm] = point.solution.pi
        row.update({f'pi_{cid}': value for cid, value in zip(ids, pi)})
        rows.append(row)
    summary = pd.DataFrame(rows)
    if verify:
        summary = _verify(summary, results, seed, jobs)
    return {'profile': profile, 'points': points, 'summary': summary}


def _fl_replicate(scn: Scenario, placements, epsilon: Optional[float], settings: FLSettings, K: int,
                  cell) -> List[dict]:
    replicate, fl_seed = cell
    task = build_task(scn, settings, fl_seed)
    target = epsilon if epsilon is not None else 0.05 * task.gap(np.zeros(settings.dim))
    rows = []
    for point in placements:
        s = point.solution
        run = run_fedavg(scn, task, s.q.q, s.x, target, settings, fl_seed, K)
        rows.append({'replicate': replicate, 'method': point.method, 'x': s.x, 'J': s.J,
                     'rounds_to_eps': run.rounds_to_eps, 'wallclock_to_eps': run.wallclock_to_eps,
                     'gap_at_deadline': run.gap_at_deadline})
    return rows


def synthetic_fl_experiment(scn: Scenario, epsilon: Optional[float] = None, seed: int = 0, replicates: int = 5,
                            settings: Optional[FLSettings] = None, K: Optional[int] = None,
                            opts: Optional[PlacementOptions] = None, jobs: int = 1) -> pd.DataFrame:
    """Wall-clock and rounds to reach F(w) - F* <= epsilon for each method.

    epsilon defaults to 5% of the initial optimality gap. All methods in a
    replicate share one seed, hence the same client draws for equal q.
    """
    settings = settings or FLSettings()
    K = scn.cfg.sample_size if K is None else K
    placements = method_points(scn, K, opts, seed)
    cells = [(r, derive_seed(seed, 100, r)) for r in range(replicates)]
    results = parallel_map(partial(_fl_replicate, scn, placements, epsilon, settings, K), cells, jobs)
    return pd.DataFrame([row for rows in results for row in rows], columns=FL_COLUMNS)


def ranking_agreement(frame: pd.DataFrame) -> pd.Series:
    """Spearman correlation between analytic J and measured wall-clock, per replicate."""
    return frame.groupby('replicate').apply(
        lambda group: spearmanr(group["J"], group["wallclock_to_eps"])[0])
