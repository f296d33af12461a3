"""Scenario-level domain types: clients, radio configuration, convergence constants."""
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.constants import speed_of_light

from app.errors import InvalidParams, NonPositiveG


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ClientProfile:
    """One client's geometry, payload, compute time and statistical weights."""
    id: int
    u: float
    r: float
    payload_bits: float
    compute_time: float
    agg_weight: float
    grad_bound: float
    tx_power_w: Optional[float] = None  # per-client override of SystemConfig.tx_power_w

    def __post_init__(self):
        if not self.r > 0:
            raise InvalidParams(f"client {self.id}: transverse distance r must be > 0, got {self.r}")
        if not self.payload_bits > 0:
            raise InvalidParams(f"client {self.id}: payload_bits must be > 0")
        if not self.compute_time >= 0:
            raise InvalidParams(f"client {self.id}: compute_time must be >= 0")
        if not self.agg_weight > 0:
            raise InvalidParams(f"client {self.id}: agg_weight must be > 0")
        if not self.grad_bound > 0:
            raise InvalidParams(f"client {self.id}: grad_bound must be > 0")
        if self.tx_power_w is not None and not self.tx_power_w > 0:
            raise InvalidParams(f"client {self.id}: tx_power_w must be > 0")


@dataclass(frozen=True)
class SystemConfig:
    """Radio and problem constants. Derived quantities are always recomputed."""
    carrier_hz: float
    tx_power_w: float
    noise_density_dbm_hz: float
    bandwidth_hz: float
    waveguide_len_m: float
    sample_size: int

    def __post_init__(self):
        for name in ('carrier_hz', 'tx_power_w', 'bandwidth_hz', 'waveguide_len_m'):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidParams(f"{name} must be a positive finite number, got {value}")
        if not math.isfinite(self.noise_density_dbm_hz):
            raise InvalidParams("noise_density_dbm_hz must be finite")
        if int(self.sample_size) != self.sample_size or self.sample_size < 1:
            raise InvalidParams(f"sample_size must be an integer >= 1, got {self.sample_size}")

    @classmethod
    def from_dbm(cls, carrier_hz: float, tx_power_dbm: float, noise_density_dbm_hz: float,
                 bandwidth_hz: float, waveguide_len_m: float, sample_size: int) -> 'SystemConfig':
        return cls(carrier_hz=carrier_hz, tx_power_w=dbm_to_watts(tx_power_dbm),
                   noise_density_dbm_hz=noise_density_dbm_hz, bandwidth_hz=bandwidth_hz,
                   waveguide_len_m=waveguide_len_m, sample_size=int(sample_size))

    @property
    def friis_factor(self) -> float:
        return speed_of_light ** 2 / (16.0 * math.pi ** 2 * self.carrier_hz ** 2)

    @property
    def wavenumber(self) -> float:
        return 2.0 * math.pi * self.carrier_hz / speed_of_light

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_density_dbm_hz) * self.bandwidth_hz

    def in_range(self, x: float) -> bool:
        return 0.0 <= x <= self.waveguide_len_m


@dataclass(frozen=True)
class ConvergenceParams:
    """Inputs of the round bound: smoothness, strong convexity, epochs and per-client bounds."""
    smoothness: float
    strong_convexity: float
    local_epochs: int
    sample_size: int
    grad_var_bounds: Tuple[float, ...]
    grad_bounds: Tuple[float, ...]
    agg_weights: Tuple[float, ...]
    opt_gap: float = 0.0
    init_dist: float = 0.0

    def __post_init__(self):
        if not self.strong_convexity > 0:
            raise InvalidParams("strong_convexity must be > 0")
        if not self.smoothness >= self.strong_convexity:
            raise InvalidParams("smoothness must be >= strong_convexity")
        if self.local_epochs < 1 or self.sample_size < 1:
            raise InvalidParams("local_epochs and sample_size must be >= 1")
        n = len(self.agg_weights)
        if len(self.grad_bounds) != n or len(self.grad_var_bounds) != n:
            raise InvalidParams("grad_bounds, grad_var_bounds and agg_weights must have equal length")
        if n == 0:
            raise InvalidParams("at least one client is required")
        if any(p <= 0 for p in self.agg_weights):
            raise InvalidParams("agg_weights must be > 0")
        if abs(math.fsum(self.agg_weights) - 1.0) > 1e-12:
            raise InvalidParams(f"agg_weights must sum to 1, got {math.fsum(self.agg_weights)!r}")
        if any(g <= 0 for g in self.grad_bounds):
            raise InvalidParams("grad_bounds must be > 0")
        if any(chi < 0 for chi in self.grad_var_bounds):
            raise InvalidParams("grad_var_bounds must be >= 0")
        if not math.isfinite(self.opt_gap) or not (self.init_dist >= 0):
            raise InvalidParams("opt_gap must be finite and init_dist >= 0")


@dataclass(frozen=True, eq=False)
class ConvergenceConstants:
    """omega, nu and the statistical weights c (in whatever client order the caller uses)."""
    omega: float
    nu: float
    c: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'c', _frozen_array(self.c))
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise InvalidParams(f"omega must be > 0, got {self.omega}")
        if not math.isfinite(self.nu):
            raise InvalidParams("nu must be finite")
        if self.c.ndim != 1 or self.c.size == 0 or np.any(self.c < 0) or not np.all(np.isfinite(self.c)):
            raise InvalidParams("c must be a nonempty vector of finite nonnegative weights")
        # g(q) >= omega * (sum sqrt c)^2 + nu over the simplex
        if self.omega * float(np.sum(np.sqrt(self.c))) ** 2 + self.nu <= 0:
            raise NonPositiveG("convergence factor g(q) is not positive on the simplex")

    def reordered(self, perm: Sequence[int]) -> 'ConvergenceConstants':
        return ConvergenceConstants(omega=self.omega, nu=self.nu, c=self.c[np.asarray(perm)])


@dataclass(frozen=True, eq=False)
class Scenario:
    clients: Tuple[ClientProfile, ...]
    cfg: SystemConfig
    conv: ConvergenceConstants
    seed: int = 0
    label_dists: Optional[np.ndarray] = None
    heterogeneity: Optional[np.ndarray] = None
    conv_params: Optional[ConvergenceParams] = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, 'clients', tuple(self.clients))
        if not self.clients:
            raise InvalidParams("a scenario needs at least one client")
        if len(self.clients) != self.conv.c.size:
            raise InvalidParams(
                f"{len(self.clients)} clients but {self.conv.c.size} statistical weights")
        total = math.fsum(c.agg_weight for c in self.clients)
        if abs(total - 1.0) > 1e-12:
            raise InvalidParams(f"aggregation weights must sum to 1, got {total!r}")

    @property
    def n_clients(self) -> int:
        return len(self.clients)
