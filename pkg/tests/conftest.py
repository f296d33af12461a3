import math

import numpy as np
import pytest
import yaml

from app.models.base import ClientProfile, ConvergenceConstants, Scenario, SystemConfig
from app.models.sampling import LatencyProfile, SamplingDistribution
from app.simulation.scenario_generator import generate_scenario


def make_system(L=10.0, K=10) -> SystemConfig:
    return SystemConfig.from_dbm(28e9, 23.0, -174.0, 10e6, L, K)


def make_client(cid, u, r=2.0, comp=0.1, weight=1.0, grad=1.0, payload=2e7) -> ClientProfile:
    return ClientProfile(id=cid, u=u, r=r, payload_bits=payload, compute_time=comp, agg_weight=weight,
                         grad_bound=grad)


def make_scenario(clients, cfg=None, omega=1.0, nu=0.0) -> Scenario:
    cfg = cfg or make_system()
    c = np.array([(cl.agg_weight * cl.grad_bound) ** 2 for cl in clients])
    return Scenario(clients=tuple(clients), cfg=cfg, conv=ConvergenceConstants(omega=omega, nu=nu, c=c))


def profile(t) -> LatencyProfile:
    return LatencyProfile.from_sorted(np.sort(np.asarray(t, dtype=float)))


def dist(q) -> SamplingDistribution:
    return SamplingDistribution.from_probs(np.asarray(q, dtype=float))


@pytest.fixture
def system():
    return make_system()


@pytest.fixture
def symmetric_pair():
    """Mirror-image clients about the waveguide midpoint."""
    return make_scenario([make_client(0, 2.0, weight=0.5), make_client(1, 8.0, weight=0.5)])


@pytest.fixture
def single_client():
    return make_scenario([make_client(0, 3.7, r=1.5)])


@pytest.fixture
def small_scenario(system):
    return generate_scenario(5, 11, system)


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_instance(rng, n, spread=1.0):
    """Random sorted latencies, interior sampling and positive weights."""
    t = np.sort(1.0 + spread * rng.random(n))
    q = rng.dirichlet(np.ones(n))
    q = np.maximum(q, 1e-3)
    q = q / math.fsum(q)
    c = 0.1 + rng.random(n)
    return profile(t), dist(q), c


@pytest.fixture
def write_scenario(tmp_path):
    """Write a scenario mapping to a YAML file and return its path."""
    def _write(document, name='scenario.yaml'):
        path = tmp_path / name
        path.write_text(yaml.safe_dump(document, sort_keys=False))
        return path
    return _write


@pytest.fixture
def pair_document():
    return {
        'system': {'carrier_hz': 28e9, 'tx_power_dbm': 23, 'noise_density_dbm_hz': -174,
                   'bandwidth_hz': 10e6, 'waveguide_len_m': 10, 'sample_size': 2},
        'clients': [
            {'u': 2.0, 'r': 2.0, 'payload_bits': 2e7, 'compute_time': 0.1, 'agg_weight': 0.5, 'grad_bound': 1.0},
            {'u': 8.0, 'r': 2.0, 'payload_bits': 2e7, 'compute_time': 0.1, 'agg_weight': 0.5, 'grad_bound': 1.0},
        ],
        'convergence': {'omega': 1.0, 'nu': 0.0},
        'solver': {'n_starts': 2, 'grid_points': 256, 'probes': 8},
    }
