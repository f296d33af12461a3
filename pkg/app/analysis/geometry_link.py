"""
Pinching-antenna link geometry.

Distance from the antenna at position x on the waveguide to each client, the
free-space SNR, the per-round latency t(x) = t_comp + S / (B log2(1 + SNR)) and
its closed-form position derivative.

All functions accept a scalar or an ndarray of positions. Positions outside
[0, L] are evaluated (root bracketing needs them) but never returned as
solutions by the optimizers.
"""
import logging
import math
from typing import Sequence, Union

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar

from app.errors import OverflowLatency
from app.models.base import ClientProfile, SystemConfig

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


def distance(client: ClientProfile, x: ArrayLike) -> ArrayLike:
    """PA-client distance sqrt((x - u)^2 + r^2); never smaller than r."""
    return np.hypot(np.asarray(x, dtype=float) - client.u, client.r)[()]


def snr(client: ClientProfile, x: ArrayLike, cfg: SystemConfig) -> ArrayLike:
    """Linear SNR (P / sigma^2) * eta_f / d^2.

    The channel phase exp(-j k0 d) has unit modulus and drops out of |h|^2.
    """
    power = client.tx_power_w if client.tx_power_w is not None else cfg.tx_power_w
    d = distance(client, x)
    return (power / cfg.noise_power_w) * cfg.friis_factor / np.square(d)


def _spectral_efficiency(gamma: ArrayLike) -> np.ndarray:
    se = np.log1p(gamma) / math.log(2.0)
    if np.any(~(se > 0)) or np.any(~np.isfinite(se)):
        raise OverflowLatency("log2(1 + SNR) underflowed; link cannot carry the payload")
    return se


def latency(client: ClientProfile, x: ArrayLike, cfg: SystemConfig) -> ArrayLike:
    """Per-round latency t(x) in seconds."""
    return client.compute_time + upload_time(client, x, cfg)


def upload_time(client: ClientProfile, x: ArrayLike, cfg: SystemConfig) -> ArrayLike:
    """Communication part tau(x) of the latency."""
    se = _spectral_efficiency(snr(client, x, cfg))
    tau = client.payload_bits / (cfg.bandwidth_hz * se)
    if not np.all(np.isfinite(tau)):
        raise OverflowLatency(f"client {client.id}: upload time overflows at this position")
    return tau


def latency_derivative(client: ClientProfile, x: ArrayLike, cfg: SystemConfig) -> ArrayLike:
    """Closed-form dt/dx; its sign is sign(x - u) and it vanishes at x = u."""
    x = np.asarray(x, dtype=float)
    gamma = snr(client, x, cfg)
    se = _spectral_efficiency(gamma)
    offset = x - client.u
    geometric = 2.0 * offset / (np.square(offset) + client.r ** 2)
    scale = client.payload_bits / (cfg.bandwidth_hz * math.log(2.0))
    return (scale * gamma / ((1.0 + gamma) * np.square(se)) * geometric)[()]


def latency_matrix(clients: Sequence[ClientProfile], xs: ArrayLike, cfg: SystemConfig) -> np.ndarray:
    """Latencies of all clients at all positions, shape (N, len(xs))."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    return np.vstack([latency(c, xs, cfg) for c in clients])


def latency_vector(clients: Sequence[ClientProfile], x: float, cfg: SystemConfig) -> np.ndarray:
    return np.array([latency(c, x, cfg) for c in clients], dtype=float)


def derivative_vector(clients: Sequence[ClientProfile], x: float, cfg: SystemConfig) -> np.ndarray:
    return np.array([latency_derivative(c, x, cfg) for c in clients], dtype=float)


def check_position(x: float, cfg: SystemConfig) -> bool:
    """Warn (but do not fail) when x lies outside the waveguide."""
    if not cfg.in_range(x):
        logger.warning(f"Position x={x} m is outside the waveguide [0, {cfg.waveguide_len_m}] m")
        return False
    return True


def geometry_heuristic(clients: Sequence[ClientProfile], cfg: SystemConfig) -> float:
    """Geometry-only placement: minimize the largest PA-client distance.

    max_i d_i(x) is minimized between the extreme projections; with unequal r the
    minimizer is found on the upper envelope by scalar search.
    """
    lo = max(0.0, min(c.u for c in clients))
    hi = min(cfg.waveguide_len_m, max(c.u for c in clients))
    if hi <= lo:
        return float(np.clip(0.5 * (lo + hi), 0.0, cfg.waveguide_len_m))

    def worst(x):
        return max(float(distance(c, x)) for c in clients)

    result = minimize_scalar(worst, bounds=(lo, hi), method='bounded', options={'xatol': 1e-10})
    return float(result.x)


def link_table(clients: Sequence[ClientProfile], x: float, cfg: SystemConfig) -> pd.DataFrame:
    """One row per client: distance, SNR, upload time, latency and its slope at x."""
    check_position(x, cfg)
    rows = []
    for c in clients:
        rows.append({
            'id': c.id,
            'u': c.u,
            'r': c.r,
            'd': float(distance(c, x)),
            'snr': float(snr(c, x, cfg)),
            'tau': float(upload_time(c, x, cfg)),
            't': float(latency(c, x, cfg)),
            'dt_dx': float(latency_derivative(c, x, cfg)),
        })
    return pd.DataFrame(rows, columns=['id', 'u', 'r', 'd', 'snr', 'tau', 't', 'dt_dx'])
