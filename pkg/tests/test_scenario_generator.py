import math

import numpy as np
import pytest

from app.errors import InvalidParams
from app.simulation.scenario_generator import GeneratorSettings, generate_scenario, heterogeneity_scores
from tests.conftest import make_system


def test_same_seed_same_scenario(system):
    a = generate_scenario(12, 42, system)
    b = generate_scenario(12, 42, system)
    assert a.clients == b.clients
    assert np.array_equal(a.conv.c, b.conv.c)
    assert np.array_equal(a.label_dists, b.label_dists)


def test_different_seed_different_scenario(system):
    assert generate_scenario(6, 1, system).clients != generate_scenario(6, 2, system).clients


def test_ranges_and_weights(system):
    scn = generate_scenario(50, 3, system)
    for c in scn.clients:
        assert 0.0 <= c.u <= system.waveguide_len_m
        assert 1.0 <= c.r <= 5.0
        assert 0.05 <= c.compute_time <= 0.15
        assert c.grad_bound >= 1.0
    assert math.fsum(c.agg_weight for c in scn.clients) == pytest.approx(1.0, abs=1e-12)
    assert [c.id for c in scn.clients] == list(range(50))


def test_statistical_weights_follow_gradient_bounds(small_scenario):
    scn = small_scenario
    expected = [(c.agg_weight * c.grad_bound) ** 2 for c in scn.clients]
    assert np.allclose(scn.conv.c, expected)
    assert scn.conv.omega == 1.0 and scn.conv.nu == 0.0


def test_iid_labels_have_no_heterogeneity(system):
    scn = generate_scenario(8, 5, system, {'dirichlet_alpha': math.inf})
    assert np.allclose(scn.heterogeneity, 0.0)
    assert all(c.grad_bound == pytest.approx(1.0) for c in scn.clients)


def test_heterogeneity_scores_hand_example():
    labels = np.array([[1.0, 0.0], [0.0, 1.0]])
    scores = heterogeneity_scores(labels, np.array([1.0, 1.0]))
    assert np.allclose(scores, [math.sqrt(0.5), math.sqrt(0.5)])


def test_convergence_params_override(system):
    params = {'smoothness': 2.0, 'strong_convexity': 1.0, 'local_epochs': 5}
    scn = generate_scenario(4, 9, system, {'convergence_params': params})
    assert scn.conv_params is not None
    assert scn.conv.omega == pytest.approx((5 / system.sample_size) * 2.0)


def test_overrides_change_ranges():
    scn = generate_scenario(20, 1, make_system(L=4.0), {'r_min': 2.0, 'r_max': 2.0})
    assert all(c.r == 2.0 and c.u <= 4.0 for c in scn.clients)


@pytest.mark.parametrize("overrides", [{'r_min': 0.0}, {'comp_min': 0.3}, {'dirichlet_alpha': 0.0},
                                       {'samples_min': 10, 'samples_max': 5}])
def test_invalid_settings(overrides):
    with pytest.raises(InvalidParams):
        GeneratorSettings(**overrides)


def test_needs_a_client(system):
    with pytest.raises(InvalidParams):
        generate_scenario(0, 1, system)
