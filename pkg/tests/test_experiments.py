import numpy as np
import pandas as pd
import pytest

from app.errors import InvalidParams
from app.models.placement import PlacementOptions
from app.models.sampling import InnerSolveOptions, TwoClassProblem
from app.simulation import experiments
from app.simulation.scenario_generator import generate_scenario
from app.simulation.synthetic_fl import FLSettings
from tests.conftest import make_client, make_scenario, make_system

FAST = PlacementOptions(inner=InnerSolveOptions(n_starts=2), grid_points=256, probes=8, max_probes=64)
TEMPLATE = TwoClassProblem(t_f=1.0, t_s=2.0, C_f=1.0, C_s=1.0)


@pytest.fixture
def trio():
    clients = [make_client(0, 1.5, r=1.0, comp=0.12, weight=0.3),
               make_client(1, 5.0, r=3.0, comp=0.05, weight=0.3, grad=1.5),
               make_client(2, 8.5, r=2.0, comp=0.08, weight=0.4)]
    return make_scenario(clients, omega=1.0, nu=0.5)


def test_method_points_are_nested(trio):
    points = experiments.method_points(trio, 4, FAST, seed=1)
    assert [p.method for p in points] == list(experiments.METHODS)
    conventional, random, joint = (p.solution for p in points)
    assert conventional.x == 0.0
    assert np.allclose(random.q.q, 1 / 3)
    assert joint.J <= random.J <= conventional.J


def test_tradeoff_schema_and_order(trio):
    frame = experiments.tradeoff_experiment(trio, [2, 6], FAST, seed=1)
    assert list(frame.columns) == experiments.TRADEOFF_COLUMNS
    assert list(frame['method']) == list(experiments.METHODS) * 2
    assert list(frame['K']) == [2, 2, 2, 6, 6, 6]
    assert np.allclose(frame['J'], frame['f'] * frame['g'])
    for _, group in frame.groupby('K'):
        J = group.set_index('method')['J']
        assert J['pass_joint'] <= J['pass_random'] <= J['conventional']


def test_tradeoff_verify_columns(trio):
    frame = experiments.tradeoff_experiment(trio, [3], FAST, seed=2, verify=True)
    assert list(frame.columns) == experiments.TRADEOFF_COLUMNS + ['f_mc', 'f_z']
    assert np.all(np.abs(frame['f_z']) < 5)


def test_tradeoff_independent_of_jobs(trio):
    a = experiments.tradeoff_experiment(trio, [2, 5], FAST, seed=3, jobs=1)
    b = experiments.tradeoff_experiment(trio, [2, 5], FAST, seed=3, jobs=2)
    pd.testing.assert_frame_equal(a, b)


def test_tradeoff_needs_Ks(trio):
    with pytest.raises(InvalidParams):
        experiments.tradeoff_experiment(trio, [], FAST)


def test_fast_fraction_variant_count(small_scenario):
    variant = experiments.fast_fraction_variant(small_scenario, 0.4)
    assert [c.compute_time for c in variant.clients] == [0.05, 0.05, 0.15, 0.15, 0.15]
    assert [c.u for c in variant.clients] == [c.u for c in small_scenario.clients]


def test_fast_fraction_variant_mass(small_scenario):
    variant = experiments.fast_fraction_variant(small_scenario, 0.5, mode='mass')
    fast = [c for c in variant.clients if c.compute_time == 0.05]
    assert sum(c.agg_weight for c in fast) >= 0.5
    assert sum(c.agg_weight for c in fast[:-1]) < 0.5


@pytest.mark.parametrize("fraction, mode", [(0.0, 'count'), (1.0, 'count'), (0.3, 'bogus')])
def test_fast_fraction_variant_rejects(small_scenario, fraction, mode):
    with pytest.raises(InvalidParams):
        experiments.fast_fraction_variant(small_scenario, fraction, mode)


def test_k_decomposition_schema(trio):
    frame = experiments.k_decomposition_experiment(trio, [2, 4], fractions=(0.3, 0.6), opts=FAST, seed=1)
    assert list(frame.columns) == ['fast_fraction'] + experiments.TRADEOFF_COLUMNS
    assert list(frame['fast_fraction']) == [0.3] * 6 + [0.6] * 6


def test_empirical_ccdf_example():
    frame = experiments.empirical_ccdf(np.array([2.0, 1.0, 1.0]))
    assert list(frame['t']) == [0.0, 1.0, 2.0]
    assert np.allclose(frame['ccdf'], [1.0, 1 / 3, 0.0])


def test_ccdf_single_client(single_client):
    frame = experiments.ccdf_experiment(single_client, 100, seed=1, K=2, opts=FAST)
    assert list(frame.columns) == experiments.CCDF_COLUMNS
    assert len(frame) == 6
    for _, group in frame.groupby('method'):
        assert list(group['ccdf']) == [1.0, 0.0]


def test_ccdf_curves_are_survival_functions(trio):
    frame = experiments.ccdf_experiment(trio, 2000, seed=5, K=4, opts=FAST)
    assert list(frame['method'].unique()) == list(experiments.CCDF_METHODS)
    for _, group in frame.groupby('method'):
        assert group['ccdf'].iloc[0] == 1.0
        assert group['ccdf'].iloc[-1] == 0.0
        assert np.all(np.diff(group['ccdf']) <= 0)
        assert np.all(np.diff(group['t']) > 0)


def test_tail_premium_identity():
    frame = experiments.tail_premium_experiment(TEMPLATE, [0.1, 0.5, 2.0], [2, 8])
    assert list(frame.columns) == experiments.TAIL_PREMIUM_COLUMNS
    assert list(frame['K']) == [2, 2, 2, 8, 8, 8]
    assert list(frame['Delta']) == [0.1, 0.5, 2.0] * 2
    assert np.allclose(frame['premium_scaled'], frame['psi_gap'], rtol=1e-6)
    assert np.all(frame['delta_star'] < 0.5)
    assert np.allclose(frame['P_at_least_one_slow'], 1 - (1 - frame['delta_star']) ** frame['K'])


def test_tail_premium_needs_sweeps():
    with pytest.raises(InvalidParams):
        experiments.tail_premium_experiment(TEMPLATE, [], [2])


def test_phase_transition_experiment_blocks():
    frame = experiments.phase_transition_experiment(TEMPLATE, [8, 16], C_s_values=[1.0, 0.5],
                                                    threshold_fractions=[0.5])
    assert list(frame.columns) == experiments.PHASE_COLUMNS
    assert len(frame) == 6
    assert list(frame['C_s'].iloc[:4]) == [1.0, 1.0, 0.5, 0.5]
    assert frame['threshold'].iloc[4:].all()


def test_phase_transition_defaults_to_template():
    frame = experiments.phase_transition_experiment(TEMPLATE, [8, 16])
    assert list(frame['C_s']) == [1.0, 1.0]


def test_breakpoint_experiment_symmetric_pair(symmetric_pair):
    tables = experiments.breakpoint_experiment(symmetric_pair, 2, n_grid=21, opts=FAST, seed=1)
    profile, points, summary = tables['profile'], tables['points'], tables['summary']
    assert list(profile.columns) == ['x', 't_0', 't_1', 'J_star']
    assert len(profile) == 21
    assert len(points) == 1
    assert points['x'].iloc[0] == pytest.approx(5.0, abs=1e-6)
    assert list(summary['method']) == ['pass_search', 'grid', 'geometry', 'conventional']
    assert list(summary.columns) == ['method', 'x', 'f', 'g', 'J', 'pi_0', 'pi_1']
    J = summary.set_index('method')['J']
    assert J['pass_search'] <= J['grid'] * (1 + 1e-9)
    assert J['pass_search'] <= J['conventional']
    assert np.allclose(summary[['pi_0', 'pi_1']].sum(axis=1), 1.0)


def test_synthetic_fl_schema_and_common_draws(trio):
    settings = FLSettings(dim=3)
    frame = experiments.synthetic_fl_experiment(trio, seed=4, replicates=2, settings=settings, K=4, opts=FAST)
    assert list(frame.columns) == experiments.FL_COLUMNS
    assert list(frame['replicate']) == [0, 0, 0, 1, 1, 1]
    assert list(frame['method']) == list(experiments.METHODS) * 2
    for _, group in frame.groupby('replicate'):
        rounds = group.set_index('method')['rounds_to_eps']
        assert rounds['conventional'] == rounds['pass_random']
        assert np.all(group['rounds_to_eps'] > 0)


def test_ranking_agreement():
    frame = pd.DataFrame({'replicate': [0, 0, 0, 1, 1, 1], 'J': [3.0, 2.0, 1.0, 3.0, 2.0, 1.0],
                          'wallclock_to_eps': [30.0, 20.0, 10.0, 10.0, 20.0, 30.0]})
    agreement = experiments.ranking_agreement(frame)
    assert agreement.loc[0] == pytest.approx(1.0)
    assert agreement.loc[1] == pytest.approx(-1.0)


def test_tradeoff_rescales_omega_with_K():
    scn = generate_scenario(5, 11, make_system(K=10),
                            {'convergence_params': {'smoothness': 2.0, 'strong_convexity': 1.0, 'local_epochs': 1}})
    frame = experiments.tradeoff_experiment(scn, [10, 20], FAST, seed=1)
    conventional = frame[frame['method'] == 'conventional'].set_index('K')['g']
    total = scn.n_clients * float(np.sum(scn.conv.c))
    assert conventional[10] == pytest.approx(0.2 * total + scn.conv.nu, rel=1e-12)
    assert conventional[20] == pytest.approx((1 / 20) * 2.0 * total + scn.conv.nu, rel=1e-12)


@pytest.mark.parametrize("K", [5, 10, 20])
def test_slow_mass_nonincreasing_in_gap(K):
    Deltas = [round(0.1 * k, 10) for k in range(1, 21)]
    frame = experiments.tail_premium_experiment(TEMPLATE, Deltas, [K])
    assert np.all(np.diff(frame['delta_star']) <= 1e-9)


@pytest.mark.parametrize("K", [5, 10, 20])
def test_slow_mass_tends_to_statistics_split(K):
    template = TwoClassProblem(t_f=1.0, t_s=2.0, C_f=1.0, C_s=2.0)
    frame = experiments.tail_premium_experiment(template, [1e-7], [K])
    assert frame['delta_star'].iloc[0] == pytest.approx(2.0 / 3.0, abs=1e-4)


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(5))
def test_nested_dominance_on_generated_scenarios(seed):
    scn = generate_scenario(5, seed, make_system())
    frame = experiments.tradeoff_experiment(scn, [10, 20, 30], FAST, seed=seed)
    for _, group in frame.groupby('K'):
        J = group.set_index('method')['J']
        assert J['pass_joint'] <= J['pass_random'] <= J['conventional']


@pytest.mark.slow
def test_joint_straggler_latency_stays_flat_across_K():
    # g nearly independent of q
    scn = generate_scenario(5, 11, make_system(), {'omega': 1e-6, 'nu': 1.0})
    frame = experiments.k_decomposition_experiment(scn, [1, 10, 25, 50], fractions=(0.4,), opts=FAST, seed=3)
    f = frame.pivot(index='K', columns='method', values='f')
    joint_range = f['pass_joint'].max() - f['pass_joint'].min()
    conventional_range = f['conventional'].max() - f['conventional'].min()
    assert conventional_range > 0
    assert joint_range <= 0.5 * conventional_range


@pytest.mark.slow
def test_wallclock_ranking_follows_objective(trio):
    frame = experiments.synthetic_fl_experiment(trio, seed=8, replicates=5, settings=FLSettings(dim=3), K=4,
                                                opts=FAST)
    agreement = experiments.ranking_agreement(frame)
    assert len(agreement) == 5
    assert int((agreement > 0).sum()) >= 4
