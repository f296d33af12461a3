import numpy as np
import pytest

from app.analysis.geometry_link import latency
from app.errors import InvalidParams, MaxRoundsExceeded
from app.simulation.synthetic_fl import FLSettings, QuadraticTask, build_task, closed_form_rounds, run_fedavg

SETTINGS = FLSettings(dim=3, smoothness=4.0, strong_convexity=1.0)


def _single_task(a=2.0):
    return QuadraticTask(curvature=np.array([a]), targets=np.ones((1, 3)), weights=np.array([1.0]),
                         noise=np.zeros(1))


def test_noiseless_single_client_matches_closed_form(single_client):
    scn = single_client
    task = _single_task()
    assert task.gap(np.zeros(3)) == pytest.approx(3.0)
    run = run_fedavg(scn, task, [1.0], 3.7, 1e-3, SETTINGS, seed=1, K=1)
    expected = closed_form_rounds(2.0, SETTINGS.step, 3.0, 1e-3)
    assert expected == 14
    assert run.rounds_to_eps == expected
    t = float(latency(scn.clients[0], 3.7, scn.cfg))
    assert run.wallclock_to_eps == pytest.approx(expected * t)
    assert run.final_gap <= 1e-3


def test_target_already_met(single_client):
    run = run_fedavg(single_client, _single_task(), [1.0], 0.0, 10.0, SETTINGS, seed=1, K=1)
    assert run.rounds_to_eps == 0
    assert run.wallclock_to_eps == 0.0
    assert closed_form_rounds(2.0, 0.1, 3.0, 10.0) == 0


def test_round_cap(single_client):
    settings = FLSettings(dim=3, max_rounds=2)
    with pytest.raises(MaxRoundsExceeded):
        run_fedavg(single_client, _single_task(), [1.0], 0.0, 1e-12, settings, seed=1, K=1)


def test_epsilon_must_be_positive(single_client):
    with pytest.raises(InvalidParams):
        run_fedavg(single_client, _single_task(), [1.0], 0.0, 0.0, SETTINGS, seed=1)


def test_deadline_gap_freezes(single_client):
    scn = single_client
    t = float(latency(scn.clients[0], 3.7, scn.cfg))
    settings = FLSettings(dim=3, deadline=2.5 * t)
    run = run_fedavg(scn, _single_task(), [1.0], 3.7, 1e-3, settings, seed=1, K=1)
    assert run.gap_at_deadline > run.final_gap
    assert run.gap_at_deadline == pytest.approx(3.0 * 0.5625 ** 2)


def test_task_optimum_is_stationary(small_scenario):
    task = build_task(small_scenario, SETTINGS, seed=4)
    w = task.optimum
    grad = (task.weights[:, None] * task.curvature[:, None] * (w[None, :] - task.targets)).sum(axis=0)
    assert np.allclose(grad, 0.0, atol=1e-12)
    assert task.gap(w) == pytest.approx(0.0, abs=1e-12)
    assert np.all((task.curvature >= 1.0) & (task.curvature <= 4.0))


def test_same_seed_same_run(small_scenario):
    scn = small_scenario
    settings = FLSettings(dim=4, noise_std=[0.1] * scn.n_clients)
    task = build_task(scn, settings, seed=2)
    q = np.full(scn.n_clients, 1 / scn.n_clients)
    eps = 0.2 * task.gap(np.zeros(4))
    a = run_fedavg(scn, task, q, 5.0, eps, settings, seed=8)
    b = run_fedavg(scn, task, q, 5.0, eps, settings, seed=8)
    assert a == b


def test_noise_length_checked(small_scenario):
    with pytest.raises(InvalidParams):
        build_task(small_scenario, FLSettings(noise_std=[0.1]), seed=1)


@pytest.mark.parametrize("kwargs", [{'dim': 0}, {'strong_convexity': 5.0}, {'learning_rate': 0.0},
                                    {'deadline': -1.0}])
def test_invalid_settings(kwargs):
    with pytest.raises(InvalidParams):
        FLSettings(**kwargs)
