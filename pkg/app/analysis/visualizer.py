"""
Terminal rendering for placement and participation results.

This module provides colorful terminal output; result files are written
separately by the emitter.
"""
import logging
from typing import Iterable, Sequence

import numpy as np
import pandas as pd
from colorama import Fore, Style, init
from tabulate import tabulate

from app.models.placement import PlacementSolution
from app.models.sampling import PositionSolution

# Initialize colorama for cross-platform colored terminal text
init()

logger = logging.getLogger(__name__)

WIDTH = 80


def _status(converged: bool) -> str:
    if converged:
        return f"{Fore.GREEN}converged{Style.RESET_ALL}"
    return f"{Fore.RED}NOT CONVERGED{Style.RESET_ALL}"


class AnalysisVisualizer:
    """Terminal-based visualizer for solver and experiment results."""

    @staticmethod
    def print_header(title: str):
        """Print a styled header.

        Args:
            title: Header title text
        """
        print("\n" + "=" * WIDTH)
        print(f"{Fore.CYAN}{Style.BRIGHT}{title.center(WIDTH)}{Style.RESET_ALL}")
        print("=" * WIDTH)

    @staticmethod
    def print_subheader(title: str):
        print("\n" + "-" * WIDTH)
        print(f"{Fore.YELLOW}{title}{Style.RESET_ALL}")
        print("-" * WIDTH)

    @staticmethod
    def print_latency_table(frame: pd.DataFrame, x: float):
        """Print per-client link quantities at one antenna position.

        The slowest client is highlighted.
        """
        AnalysisVisualizer.print_header(f"Per-client latency at x = {x:.6g} m")
        slowest = int(frame['t'].to_numpy().argmax()) if len(frame) else -1
        rows = []
        for index, row in enumerate(frame.itertuples(index=False)):
            color = Fore.RED if index == slowest else ''
            reset = Style.RESET_ALL if color else ''
            rows.append([row.id, f"{row.u:.4f}", f"{row.r:.4f}", f"{row.d:.4f}", f"{row.snr:.4e}",
                         f"{row.tau:.6f}", f"{color}{row.t:.6f}{reset}", f"{row.dt_dx:+.4e}"])
        print(tabulate(rows, headers=["Client", "u [m]", "r [m]", "d [m]", "SNR", "tau [s]", "t [s]", "dt/dx"],
                       tablefmt="simple"))

    @staticmethod
    def _sampling_rows(ids: Sequence[int], q: np.ndarray, pi: np.ndarray, t: np.ndarray):
        order = np.argsort(t, kind='stable')
        return [[ids[i], f"{t[i]:.6f}", f"{q[i]:.6f}", f"{pi[i]:.6f}"] for i in order]

    @staticmethod
    def print_position_solution(solution: PositionSolution, ids: Sequence[int]):
        """Print the inner optimum at one position, clients listed fastest first.

        Args:
            solution: Inner solve result
            ids: Client ids in the scenario's order
        """
        AnalysisVisualizer.print_header(f"Participation optimum at x = {solution.x:.6g} m")
        print(f"J = {solution.J:.10g}   f = {solution.f:.10g} s   g = {solution.g:.10g}")
        print(f"KKT residual {solution.kkt_residual:.3e} ({_status(solution.converged)}), "
              f"{solution.n_classes} latency classes")
        if solution.note:
            print(f"{Fore.CYAN}{solution.note}{Style.RESET_ALL}")

        n = solution.profile.n
        t = np.empty(n)
        t[solution.profile.perm] = solution.profile.sorted_t
        pi = np.empty(n)
        pi[solution.profile.perm] = solution.pi
        AnalysisVisualizer.print_subheader("Sampling and straggler probabilities")
        print(tabulate(AnalysisVisualizer._sampling_rows(ids, solution.q.q, pi, t),
                       headers=["Client", "t [s]", "q", "P(straggler)"], tablefmt="simple"))

    @staticmethod
    def print_placement_summary(solution: PlacementSolution, ids: Sequence[int]):
        """Print the placement optimum, the breakpoints and the best candidates."""
        AnalysisVisualizer.print_header("Antenna placement")
        print(f"x* = {solution.x_star:.9g} m   J* = {solution.J_star:.10g}   "
              f"f* = {solution.f_star:.10g} s   g* = {solution.g_star:.10g}")
        print(f"KKT residual {solution.kkt_residual:.3e} ({_status(solution.converged)})")

        AnalysisVisualizer.print_subheader(f"Ordering breakpoints ({len(solution.partition.breakpoints)})")
        for bp in solution.partition.breakpoints[:20]:
            print(f"• x = {bp.x:.9g} m: clients {ids[bp.i]} and {ids[bp.j]} ({bp.kind})")
        if len(solution.partition.breakpoints) > 20:
            print(f"• ... {len(solution.partition.breakpoints) - 20} more")

        ranked = sorted((c for c in solution.candidates if np.isfinite(c.J)), key=lambda c: (c.J, c.x))
        AnalysisVisualizer.print_subheader(f"Best candidates (of {len(solution.candidates)})")
        print(tabulate([[f"{c.x:.9g}", f"{c.J:.10g}", c.source, 'yes' if c.converged else 'no'] for c in ranked[:10]],
                       headers=["x [m]", "J", "Source", "Converged"], tablefmt="simple"))

        AnalysisVisualizer.print_subheader("Sampling at x*")
        print(tabulate([[cid, f"{q:.6f}", f"{pi:.6f}"]
                        for cid, q, pi in zip(ids, solution.q_star.q, solution.straggler_probs)],
                       headers=["Client", "q*", "P(straggler)"], tablefmt="simple"))

    @staticmethod
    def print_table_preview(name: str, frame: pd.DataFrame, rows: int = 12):
        """Print the first rows of an experiment table."""
        AnalysisVisualizer.print_subheader(f"{name}: {len(frame)} rows")
        print(tabulate(frame.head(rows), headers='keys', tablefmt="simple", showindex=False, floatfmt=".6g"))

    @staticmethod
    def print_written(paths: Iterable):
        paths = list(paths)
        if not paths:
            return
        print(f"\n{Fore.GREEN}Wrote {len(paths)} file(s):{Style.RESET_ALL}")
        for path in paths:
            print(f"• {path}")
