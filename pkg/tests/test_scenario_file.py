import copy

import numpy as np
import pytest

from app.errors import ScenarioError
from app.models.base import dbm_to_watts
from app.scenario_file import load_document, load_scenario, parse_document, scenario_to_document
from app.simulation.scenario_generator import generate_scenario


def _error(document, write_scenario) -> ScenarioError:
    with pytest.raises(ScenarioError) as info:
        load_scenario(write_scenario(document))
    return info.value


def test_explicit_clients(pair_document, write_scenario):
    loaded = load_scenario(write_scenario(pair_document))
    scn = loaded.scenario
    assert [c.id for c in scn.clients] == [0, 1]
    assert np.allclose(scn.conv.c, [0.25, 0.25])
    assert scn.cfg.sample_size == 2
    assert scn.cfg.tx_power_w == pytest.approx(dbm_to_watts(23.0))
    assert loaded.placement.probes == 8
    assert loaded.placement.inner.n_starts == 2


def test_invalid_field_reports_key_path(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    document['clients'][1]['r'] = -1.0
    assert _error(document, write_scenario).key_path == 'clients.1.r'


def test_unknown_key_rejected(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    document['system']['bogus'] = 1
    assert _error(document, write_scenario).key_path == 'system.bogus'


def test_clients_and_generator_are_exclusive(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    document['generator'] = {'n_clients': 3}
    assert 'exactly one' in str(_error(document, write_scenario))
    del document['generator']
    del document['clients']
    assert 'exactly one' in str(_error(document, write_scenario))


def test_convergence_sections_are_exclusive(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    document['convergence_params'] = {'smoothness': 1.0, 'strong_convexity': 1.0}
    assert 'at most one' in str(_error(document, write_scenario))


def test_weights_must_sum_to_one(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    document['clients'][0]['agg_weight'] = 0.6
    assert _error(document, write_scenario).key_path == 'clients'


def test_duplicate_ids(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    document['clients'][0]['id'] = 7
    document['clients'][1]['id'] = 7
    assert _error(document, write_scenario).key_path == 'clients.1.id'


def test_statistical_weights_length(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    document['convergence']['c'] = [1.0, 2.0, 3.0]
    assert _error(document, write_scenario).key_path == 'convergence.c'


def test_noise_length(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    document['fl'] = {'noise_std': [0.1]}
    assert _error(document, write_scenario).key_path == 'fl.noise_std'


def test_convergence_params(pair_document, write_scenario):
    document = copy.deepcopy(pair_document)
    del document['convergence']
    document['convergence_params'] = {'smoothness': 2.0, 'strong_convexity': 1.0, 'local_epochs': 4}
    scn = load_scenario(write_scenario(document)).scenario
    assert scn.conv_params is not None
    assert scn.conv.omega == pytest.approx((4 / 2) * 2.0)


def test_generator_document(write_scenario):
    document = {'system': {'sample_size': 3}, 'generator': {'n_clients': 6, 'seed': 4}}
    a = load_scenario(write_scenario(document, 'a.yaml')).scenario
    b = load_scenario(write_scenario(document, 'b.yaml')).scenario
    assert a.n_clients == 6
    assert a.clients == b.clients
    assert a.label_dists is not None


def test_generator_with_convergence_constants(write_scenario):
    document = {'generator': {'n_clients': 3, 'seed': 1}, 'convergence': {'omega': 2.0, 'nu': 0.5}}
    scn = load_scenario(write_scenario(document)).scenario
    assert scn.conv.omega == 2.0 and scn.conv.nu == 0.5


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ScenarioError):
        load_scenario(tmp_path / 'missing.yaml')
    bad = tmp_path / 'bad.yaml'
    bad.write_text("system: [unclosed\n")
    with pytest.raises(ScenarioError):
        load_scenario(bad)
    listing = tmp_path / 'list.yaml'
    listing.write_text("- 1\n- 2\n")
    with pytest.raises(ScenarioError):
        load_scenario(listing)


def test_document_round_trip(small_scenario):
    body = scenario_to_document(small_scenario)
    body['version'] = '0.0.0'
    rebuilt = load_document(parse_document(body)).scenario
    assert [c.u for c in rebuilt.clients] == [c.u for c in small_scenario.clients]
    assert np.allclose(rebuilt.conv.c, small_scenario.conv.c, rtol=0, atol=0)
    assert rebuilt.cfg.tx_power_w == pytest.approx(small_scenario.cfg.tx_power_w, rel=1e-12)


def test_resolved_configuration(pair_document, write_scenario):
    resolved = load_scenario(write_scenario(pair_document)).resolved
    assert set(resolved) == {'system', 'clients', 'convergence', 'solver', 'fl'}
    assert resolved['solver']['probes'] == 8


def test_round_bound_inputs_survive_round_trip(system):
    scn = generate_scenario(4, 2, system, {'convergence_params': {'smoothness': 3.0, 'strong_convexity': 1.5,
                                                                  'local_epochs': 2}})
    body = scenario_to_document(scn)
    assert 'convergence' not in body
    rebuilt = load_document(parse_document(body)).scenario
    assert rebuilt.conv_params is not None
    assert rebuilt.conv.omega == pytest.approx(scn.conv.omega, rel=1e-14)
    assert rebuilt.conv.nu == pytest.approx(scn.conv.nu, rel=1e-12)
