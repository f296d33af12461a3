#!/usr/bin/env python3
"""
Pinching-antenna placement and client sampling for synchronous federated learning.

This script provides commands to inspect link latencies, solve the placement and
participation problem, run the experiment suites and expand generated scenarios.
"""
import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

# Add project root to Python path
sys.path.append(str(Path(__file__).parent))

from app import __version__
from app.analysis.convergence import scenario_constants
from app.analysis.geometry_link import check_position, link_table
from app.analysis.participation import kkt_report, solve_at_position
from app.analysis.placement import solve_placement
from app.analysis.visualizer import AnalysisVisualizer
from app.config import Config
from app.errors import DidNotConverge, PassFlError, ScenarioError
from app.models.sampling import TwoClassProblem
from app.parallel import default_jobs
from app.scenario_file import load_document, load_scenario, scenario_to_document
from app.simulation import experiments
from app.simulation.emitter import ResultWriter

logger = logging.getLogger(__name__)

EXPERIMENTS = ('ccdf', 'tail_premium', 'phase_transition', 'tradeoff', 'k_decomposition', 'breakpoints',
               'synthetic_fl')


def setup_logging():
    """Configure logging: file plus stderr, with the level from the environment."""
    logging.basicConfig(
        level=getattr(logging, Config.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(Config.LOG_FILE),
            logging.StreamHandler(sys.stderr)
        ]
    )


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _sample_size(args, loaded) -> int:
    K = loaded.scenario.cfg.sample_size if args.K is None else args.K
    if K < 1:
        raise ScenarioError(f"K must be >= 1, got {K}", '--K')
    return K


def _ids(scn) -> List[int]:
    return [c.id for c in scn.clients]


def cmd_latency(args):
    """Print and write per-client distance, SNR, upload time, latency and slope at --x."""
    loaded = load_scenario(args.scenario)
    scn = loaded.scenario
    frame = link_table(scn.clients, args.x, scn.cfg)
    AnalysisVisualizer.print_latency_table(frame, args.x)
    with ResultWriter(args.out) as writer:
        writer.write_table('latency', frame)
        AnalysisVisualizer.print_written(writer.written)


def _inner_document(solution, scn, K) -> dict:
    consts = scenario_constants(scn, K)
    sorted_consts = consts.reordered(solution.profile.perm)
    report = kkt_report(solution.q_sorted, solution.profile, sorted_consts.c, consts, K)
    perm = solution.profile.perm
    lambdas, psi, pi = np.empty(scn.n_clients), np.empty(scn.n_clients), np.empty(scn.n_clients)
    lambdas[perm], psi[perm], pi[perm] = report.lambdas, report.psi, solution.pi
    return {
        'x': solution.x,
        'K': K,
        'J': solution.J,
        'f': solution.f,
        'g': solution.g,
        'q': solution.q.q,
        'straggler_probs': pi,
        'kkt': {
            'residual': solution.kkt_residual,
            'converged': solution.converged,
            'lambda_spread': report.lambda_spread,
            'lambdas': lambdas,
            'psi': psi,
            'recursion_residuals': report.recursion_residuals,
        },
        'latency_order': [int(scn.clients[i].id) for i in perm],
        'n_classes': solution.n_classes,
    }


def _placement_document(solution, scn) -> dict:
    ids = _ids(scn)
    return {
        'x_star': solution.x_star,
        'J_star': solution.J_star,
        'f_star': solution.f_star,
        'g_star': solution.g_star,
        'q_star': solution.q_star.q,
        'straggler_probs': solution.straggler_probs,
        'kkt_residual': solution.kkt_residual,
        'converged': solution.converged,
        'breakpoints': [{'x': b.x, 'i': ids[b.i], 'j': ids[b.j], 'kind': b.kind}
                        for b in solution.partition.breakpoints],
        'candidates': [{'x': c.x, 'J': c.J, 'source': c.source, 'converged': c.converged, 'error': c.error}
                       for c in solution.candidates],
    }


def cmd_solve(args):
    """Solve the participation problem at --x (--inner-only) or the full placement problem."""
    loaded = load_scenario(args.scenario)
    scn = loaded.scenario
    K = _sample_size(args, loaded)
    consts = scenario_constants(scn, K)
    opts = replace(loaded.placement, jobs=args.jobs)

    if args.inner_only:
        if args.x is None:
            raise ScenarioError("--inner-only needs --x", '--x')
        check_position(args.x, scn.cfg)
        solution = solve_at_position(scn.clients, args.x, scn.cfg, consts, K, opts.inner, args.seed, opts.tie_tol)
        AnalysisVisualizer.print_position_solution(solution, _ids(scn))
        document = {'command': 'solve', 'mode': 'inner', 'seed': args.seed,
                    'result': _inner_document(solution, scn, K), 'scenario': loaded.resolved}
        with ResultWriter(args.out) as writer:
            writer.write_document('inner', document)
            AnalysisVisualizer.print_written(writer.written)
        if not solution.converged:
            raise DidNotConverge(f"inner solve stopped with KKT residual {solution.kkt_residual:.3e}")
        return

    solution = solve_placement(scn.clients, scn.cfg, consts, K, opts, args.seed)
    AnalysisVisualizer.print_placement_summary(solution, _ids(scn))
    document = {'command': 'solve', 'mode': 'placement', 'seed': args.seed, 'K': K,
                'result': _placement_document(solution, scn), 'scenario': loaded.resolved}
    with ResultWriter(args.out) as writer:
        writer.write_document('placement', document)
        AnalysisVisualizer.print_written(writer.written)


def _two_class_template(args, scn, K) -> TwoClassProblem:
    consts = scenario_constants(scn, K)
    return TwoClassProblem(t_f=args.t_f, t_s=args.t_s, C_f=args.C_f, C_s=args.C_s, omega=consts.omega,
                           nu=consts.nu, K=K)


def _run_experiment(args, loaded, K):
    scn = loaded.scenario
    opts = loaded.placement
    name = args.name
    if name == 'ccdf':
        return {'ccdf': experiments.ccdf_experiment(scn, args.R, args.seed, K, replace(opts, jobs=args.jobs))}
    if name == 'tail_premium':
        return {'tail_premium': experiments.tail_premium_experiment(
            _two_class_template(args, scn, K), args.deltas, args.Ks or [5, 10, 20], args.tol, args.jobs)}
    if name == 'phase_transition':
        fractions = args.threshold_fractions if args.threshold_fractions is not None else []
        return {'phase_transition': experiments.phase_transition_experiment(
            _two_class_template(args, scn, K), args.Ks or [8, 16, 32, 64, 128, 256], args.C_s_values or [],
            fractions, args.rho, args.xi, args.tol, args.jobs)}
    if name == 'tradeoff':
        return {'tradeoff': experiments.tradeoff_experiment(scn, args.Ks or [10, 20, 30], opts, args.seed,
                                                            args.jobs, args.verify)}
    if name == 'k_decomposition':
        return {'k_decomposition': experiments.k_decomposition_experiment(
            scn, args.Ks or [1, 2, 5, 10, 20, 30, 40, 50], args.fractions, args.fraction_mode, opts, args.seed,
            args.jobs, args.verify)}
    if name == 'breakpoints':
        tables = experiments.breakpoint_experiment(scn, K, args.n_grid, opts, args.seed, args.jobs, args.verify)
        return {f'breakpoints_{key}': frame for key, frame in tables.items()}
    if name == 'synthetic_fl':
        fl = loaded.document.fl
        epsilon = args.epsilon if args.epsilon is not None else fl.epsilon
        replicates = args.replicates if args.replicates is not None else fl.replicates
        frame = experiments.synthetic_fl_experiment(scn, epsilon, args.seed, replicates, loaded.fl, K, opts,
                                                    args.jobs)
        agreement = experiments.ranking_agreement(frame)
        agreeing = int((agreement > 0).sum())
        logger.info(f"Wall-clock ranking agrees with J on {agreeing} of {len(agreement)} replicates")
        return {'synthetic_fl': frame}
    raise ScenarioError(f"unknown experiment '{name}' (expected one of {', '.join(EXPERIMENTS)})", 'name')


def cmd_experiment(args):
    """Run one experiment suite and write its CSV tables and a provenance document."""
    if args.seed is None:
        raise ScenarioError("experiments require --seed", '--seed')
    if args.name not in EXPERIMENTS:
        raise ScenarioError(f"unknown experiment '{args.name}' (expected one of {', '.join(EXPERIMENTS)})", 'name')
    loaded = load_scenario(args.scenario)
    K = _sample_size(args, loaded)
    logger.info(f"Running experiment '{args.name}' with seed {args.seed}, K={K}, jobs={args.jobs}")

    tables = _run_experiment(args, loaded, K)
    arguments = {key: value for key, value in sorted(vars(args).items())
                 if key not in ('func', 'command', 'jobs', 'out', 'scenario')}
    AnalysisVisualizer.print_header(f"Experiment: {args.name}")
    with ResultWriter(args.out) as writer:
        for table_name, frame in tables.items():
            AnalysisVisualizer.print_table_preview(table_name, frame)
            writer.write_table(table_name, frame)
        writer.write_document(f'{args.name}_config', {'experiment': args.name, 'seed': args.seed, 'K': K,
                                                      'arguments': arguments, 'scenario': loaded.resolved})
        AnalysisVisualizer.print_written(writer.written)


def cmd_generate(args):
    """Expand a generator block into an explicit-clients scenario file."""
    loaded = load_scenario(args.scenario)
    if loaded.document.generator is None:
        raise ScenarioError("the scenario has no 'generator' section", 'generator')
    if args.seed is not None and args.seed != loaded.document.generator.seed:
        document = loaded.document.model_copy(
            update={'generator': loaded.document.generator.model_copy(update={'seed': args.seed})})
        loaded = load_document(document)
    body = scenario_to_document(loaded.scenario)
    body['solver'] = loaded.document.solver.model_dump()
    body['fl'] = loaded.document.fl.model_dump()
    with ResultWriter(args.out) as writer:
        writer.write_document('scenario', body)
        AnalysisVisualizer.print_written(writer.written)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Pinching-antenna placement and FL client sampling")
    parser.add_argument("--version", action='version', version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, help="Scenario file (YAML)")
    common.add_argument("--K", type=int, default=None, help="Sample size (default: the scenario's)")
    common.add_argument("--jobs", type=int, default=default_jobs(), help="Worker processes (default: all cores)")
    common.add_argument("--out", default=Config.OUTPUT_DIR, help="Output directory")

    subparsers = parser.add_subparsers(dest="command", help="Command to run")

    latency_parser = subparsers.add_parser("latency", parents=[common], help="Per-client latency at a position")
    latency_parser.add_argument("--x", type=float, required=True, help="Antenna position [m]")

    solve_parser = subparsers.add_parser("solve", parents=[common], help="Solve placement and sampling")
    solve_parser.add_argument("--x", type=float, default=None, help="Antenna position [m] (with --inner-only)")
    solve_parser.add_argument("--inner-only", action='store_true', help="Only optimize sampling at --x")
    solve_parser.add_argument("--seed", type=int, default=0, help="Seed for multi-start solves")

    experiment_parser = subparsers.add_parser("experiment", parents=[common], help="Run an experiment suite")
    experiment_parser.add_argument("name", help=f"One of: {', '.join(EXPERIMENTS)}")
    experiment_parser.add_argument("--seed", type=int, default=None, help="Master seed (required)")
    experiment_parser.add_argument("--verify", action='store_true', help="Append Monte Carlo checks of f")
    experiment_parser.add_argument("--Ks", type=_int_list, default=None, help="Comma-separated K sweep")
    experiment_parser.add_argument("--R", type=int, default=10000, help="Rounds per method (ccdf)")
    experiment_parser.add_argument("--deltas", type=_float_list,
                                   default=[round(0.1 * k, 10) for k in range(1, 21)],
                                   help="Latency gaps (tail_premium)")
    experiment_parser.add_argument("--t-f", dest='t_f', type=float, default=1.0, help="Fast-class latency")
    experiment_parser.add_argument("--t-s", dest='t_s', type=float, default=2.0, help="Slow-class latency")
    experiment_parser.add_argument("--C-f", dest='C_f', type=float, default=1.0, help="Fast-class sqrt weight")
    experiment_parser.add_argument("--C-s", dest='C_s', type=float, default=1.0, help="Slow-class sqrt weight")
    experiment_parser.add_argument("--C-s-values", dest='C_s_values', type=_float_list, default=None,
                                   help="Fixed C_s values (phase_transition)")
    experiment_parser.add_argument("--threshold-fractions", type=_float_list, default=None,
                                   help="C_s^2 as fractions of the collapse threshold (phase_transition)")
    experiment_parser.add_argument("--rho", type=float, default=1.0)
    experiment_parser.add_argument("--xi", type=float, default=0.5)
    experiment_parser.add_argument("--tol", type=float, default=1e-9, help="Two-class stationarity tolerance")
    experiment_parser.add_argument("--fractions", type=_float_list, default=[0.25, 0.35, 0.45],
                                   help="Fast-class fractions (k_decomposition)")
    experiment_parser.add_argument("--fraction-mode", choices=['count', 'mass'], default='count')
    experiment_parser.add_argument("--n-grid", type=int, default=201, help="Grid points (breakpoints)")
    experiment_parser.add_argument("--epsilon", type=float, default=None, help="Target gap (synthetic_fl)")
    experiment_parser.add_argument("--replicates", type=int, default=None, help="Seeds (synthetic_fl)")

    generate_parser = subparsers.add_parser("generate", parents=[common],
                                            help="Expand a generator block into explicit clients")
    generate_parser.add_argument("--seed", type=int, default=None, help="Override the generator seed")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the application. Returns the process exit code."""
    setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse reports usage errors with status 2, which is also our config-error code
        return int(e.code or 0)

    if getattr(args, "jobs", 1) < 1:
        logger.error("--jobs must be >= 1")
        return ScenarioError.exit_code

    try:
        if args.command == "latency":
            cmd_latency(args)
        elif args.command == "solve":
            cmd_solve(args)
        elif args.command == "experiment":
            cmd_experiment(args)
        elif args.command == "generate":
            cmd_generate(args)
        else:
            parser.print_help()
            return 0
    except PassFlError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
