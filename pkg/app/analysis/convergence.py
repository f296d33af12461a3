"""Round-bound constants, the convergence factor g(q) and the wall-clock objective J = f * g."""
import logging
import math
from dataclasses import replace

import numpy as np

from app.analysis.order_stats import expected_straggler
from app.errors import DimensionMismatch, NonPositiveG
from app.models.base import ConvergenceConstants, ConvergenceParams, Scenario
from app.models.sampling import LatencyProfile, SamplingDistribution

logger = logging.getLogger(__name__)


def constants_from_params(p: ConvergenceParams) -> ConvergenceConstants:
    """Compute omega, nu and c_i = p_i^2 G_i^2 from the round-bound inputs.

    Args:
        p: Smoothness, strong convexity, epochs and per-client bounds

    Returns:
        ConvergenceConstants with the aggregate nu

    Raises:
        NonPositiveG: if the resulting g(q) would not be positive on the simplex
    """
    weights = np.asarray(p.agg_weights, dtype=float)
    grad = np.asarray(p.grad_bounds, dtype=float)
    chi = np.asarray(p.grad_var_bounds, dtype=float)

    curvature = p.smoothness / p.strong_convexity ** 2
    omega = (p.local_epochs / p.sample_size) * curvature
    c = np.square(weights) * np.square(grad)
    v_var = math.fsum(np.square(weights) * np.square(chi))
    v_eng = math.fsum(weights * np.square(grad))
    nu = (curvature * (v_var / p.local_epochs + p.opt_gap + p.local_epochs * v_eng)
          + (p.smoothness / p.strong_convexity) * p.init_dist)

    logger.debug(f"Convergence constants: omega={omega:.6g}, nu={nu:.6g}")
    return ConvergenceConstants(omega=omega, nu=nu, c=c)


def convergence_factor(q: SamplingDistribution, consts: ConvergenceConstants) -> float:
    """g(q) = omega * sum c_i / q_i + nu, with c in the same client order as q."""
    if consts.c.size != q.n:
        raise DimensionMismatch(f"q has {q.n} entries, c has {consts.c.size}")
    value = consts.omega * math.fsum(consts.c / q.q) + consts.nu
    if not value > 0:
        raise NonPositiveG(f"g(q) = {value} is not positive")
    return value


def wallclock_objective(q: SamplingDistribution, prof: LatencyProfile, K: int,
                        consts: ConvergenceConstants) -> float:
    """J(q) = f(q) g(q); consts must already be in sorted-client order."""
    return expected_straggler(q, prof, K) * convergence_factor(q, consts)


def scenario_constants(scn: Scenario, K: int) -> ConvergenceConstants:
    """Convergence constants of a scenario evaluated at sample size K.

    omega scales with 1/K, so scenarios built from round-bound inputs are
    re-evaluated at every K. Directly configured constants are returned as is.
    """
    if scn.conv_params is None or scn.conv_params.sample_size == K:
        return scn.conv
    return constants_from_params(replace(scn.conv_params, sample_size=K))
