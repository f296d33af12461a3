"""
Random scenario generator.

Clients are scattered along and beside the waveguide, with non-IID label
distributions drawn from a symmetric Dirichlet. A client's heterogeneity score
(l2 distance of its label distribution from the global mix) sets its gradient
bound, and its local dataset size sets its aggregation weight.
"""
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Optional

import numpy as np

from app.analysis.convergence import constants_from_params
from app.config import (DEFAULT_COMP_RANGE, DEFAULT_DIRICHLET_ALPHA, DEFAULT_G0, DEFAULT_N_LABELS,
                        DEFAULT_PAYLOAD_BITS, DEFAULT_R_RANGE, DEFAULT_SAMPLES_RANGE)
from app.errors import InvalidParams
from app.models.base import ClientProfile, ConvergenceConstants, ConvergenceParams, Scenario, SystemConfig
from app.parallel import stream

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GeneratorSettings:
    """Ranges and constants for `generate_scenario`. dirichlet_alpha = inf gives IID labels."""
    r_min: float = DEFAULT_R_RANGE[0]
    r_max: float = DEFAULT_R_RANGE[1]
    comp_min: float = DEFAULT_COMP_RANGE[0]
    comp_max: float = DEFAULT_COMP_RANGE[1]
    dirichlet_alpha: float = DEFAULT_DIRICHLET_ALPHA
    n_labels: int = DEFAULT_N_LABELS
    g0: float = DEFAULT_G0
    samples_min: int = DEFAULT_SAMPLES_RANGE[0]
    samples_max: int = DEFAULT_SAMPLES_RANGE[1]
    payload_bits: float = DEFAULT_PAYLOAD_BITS
    omega: float = 1.0
    nu: float = 0.0
    # smoothness, strong_convexity, local_epochs, grad_var_bounds, opt_gap, init_dist
    convergence_params: Optional[Mapping[str, Any]] = field(default=None)

    def __post_init__(self):
        if not 0 < self.r_min <= self.r_max:
            raise InvalidParams("need 0 < r_min <= r_max")
        if not 0 <= self.comp_min <= self.comp_max:
            raise InvalidParams("need 0 <= comp_min <= comp_max")
        if not self.dirichlet_alpha > 0:
            raise InvalidParams("dirichlet_alpha must be > 0")
        if self.n_labels < 1 or not 1 <= self.samples_min <= self.samples_max:
            raise InvalidParams("need n_labels >= 1 and 1 <= samples_min <= samples_max")
        if not self.g0 > 0 or not self.payload_bits > 0:
            raise InvalidParams("g0 and payload_bits must be > 0")


def heterogeneity_scores(label_dists: np.ndarray, sizes: np.ndarray) -> np.ndarray:
    """l2 distance of each client's label distribution from the size-weighted global mix."""
    mix = (sizes[:, None] * label_dists).sum(axis=0) / sizes.sum()
    return np.linalg.norm(label_dists - mix, axis=1)


def generate_scenario(n_clients: int, seed: int, cfg: SystemConfig,
                      overrides: Optional[Mapping[str, Any]] = None) -> Scenario:
    """Draw a reproducible random scenario.

    Args:
        n_clients: Number of clients
        seed: Master seed; the same seed always gives the same scenario
        cfg: Radio configuration (supplies the waveguide length)
        overrides: GeneratorSettings fields to change

    Returns:
        Scenario with label distributions and heterogeneity scores attached
    """
    if n_clients < 1:
        raise InvalidParams(f"n_clients must be >= 1, got {n_clients}")
    settings = replace(GeneratorSettings(), **dict(overrides or {}))
    rng = stream(seed)

    u = rng.uniform(0.0, cfg.waveguide_len_m, n_clients)
    r = rng.uniform(settings.r_min, settings.r_max, n_clients)
    comp = rng.uniform(settings.comp_min, settings.comp_max, n_clients)
    sizes = rng.integers(settings.samples_min, settings.samples_max, n_clients, endpoint=True).astype(float)
    if math.isinf(settings.dirichlet_alpha):
        labels = np.full((n_clients, settings.n_labels), 1.0 / settings.n_labels)
    else:
        labels = rng.dirichlet(np.full(settings.n_labels, settings.dirichlet_alpha), n_clients)

    h = heterogeneity_scores(labels, sizes)
    grad = settings.g0 * (1.0 + h)
    p = sizes / math.fsum(sizes)

    clients = tuple(
        ClientProfile(id=i, u=float(u[i]), r=float(r[i]), payload_bits=settings.payload_bits,
                      compute_time=float(comp[i]), agg_weight=float(p[i]), grad_bound=float(grad[i]))
        for i in range(n_clients))

    conv_params = None
    if settings.convergence_params is not None:
        values = dict(settings.convergence_params)
        values.setdefault('grad_var_bounds', (0.0,) * n_clients)
        conv_params = ConvergenceParams(sample_size=cfg.sample_size, grad_bounds=tuple(grad.tolist()),
                                        agg_weights=tuple(p.tolist()), **values)
        conv = constants_from_params(conv_params)
    else:
        conv = ConvergenceConstants(omega=settings.omega, nu=settings.nu, c=np.square(p) * np.square(grad))

    logger.info(f"Generated scenario with {n_clients} clients (seed {seed}, alpha {settings.dirichlet_alpha})")
    return Scenario(clients=clients, cfg=cfg, conv=conv, seed=seed, label_dists=labels, heterogeneity=h,
                    conv_params=conv_params)
