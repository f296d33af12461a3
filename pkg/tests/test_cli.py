import copy

import pandas as pd
import pytest
import yaml

from main import main


def _run(*argv) -> int:
    return main([str(a) for a in argv])


def test_version_and_help(capsys):
    assert _run('--version') == 0
    assert _run() == 0


def test_latency_table(pair_document, write_scenario, tmp_path, capsys):
    out = tmp_path / 'out'
    assert _run('latency', '--scenario', write_scenario(pair_document), '--x', 3.0, '--out', out) == 0
    frame = pd.read_csv(out / 'latency.csv')
    assert list(frame.columns) == ['id', 'u', 'r', 'd', 'snr', 'tau', 't', 'dt_dx']
    assert len(frame) == 2
    assert 'Client' in capsys.readouterr().out


def test_inner_solve_document(pair_document, write_scenario, tmp_path):
    out = tmp_path / 'out'
    assert _run('solve', '--scenario', write_scenario(pair_document), '--inner-only', '--x', 3.0,
                '--out', out, '--jobs', 1) == 0
    document = yaml.safe_load((out / 'inner.yaml').read_text())
    assert list(document)[0] == 'version'
    result = document['result']
    assert result['kkt']['converged']
    assert sum(result['q']) == pytest.approx(1.0)
    assert result['latency_order'] == [0, 1]
    assert result['J'] == pytest.approx(result['f'] * result['g'])


def test_placement_solve_document(pair_document, write_scenario, tmp_path):
    out = tmp_path / 'out'
    assert _run('solve', '--scenario', write_scenario(pair_document), '--out', out, '--jobs', 1) == 0
    result = yaml.safe_load((out / 'placement.yaml').read_text())['result']
    assert result['x_star'] == pytest.approx(5.0, abs=1e-6)
    assert len(result['breakpoints']) == 1
    assert any(c['source'] == 'breakpoint' for c in result['candidates'])


def test_inner_only_needs_position(pair_document, write_scenario, tmp_path):
    assert _run('solve', '--scenario', write_scenario(pair_document), '--inner-only', '--out', tmp_path) == 2


def test_configuration_errors(pair_document, write_scenario, tmp_path):
    assert _run('latency', '--scenario', tmp_path / 'missing.yaml', '--x', 1.0, '--out', tmp_path) == 2
    bad = copy.deepcopy(pair_document)
    bad['clients'][0]['bogus'] = True
    assert _run('latency', '--scenario', write_scenario(bad), '--x', 1.0, '--out', tmp_path) == 2
    path = write_scenario(pair_document, 'ok.yaml')
    assert _run('experiment', 'tail_premium', '--scenario', path, '--out', tmp_path) == 2
    assert _run('experiment', 'nonsense', '--scenario', path, '--seed', 1, '--out', tmp_path) == 2
    assert _run('solve', '--scenario', path, '--K', 0, '--out', tmp_path) == 2
    assert _run('solve', '--scenario', path, '--jobs', 0, '--out', tmp_path) == 2
    assert _run('latency', '--scenario', path, '--out', tmp_path) == 2


def test_numeric_error_exit_code(pair_document, write_scenario, tmp_path):
    path = write_scenario(pair_document)
    assert _run('experiment', 'tail_premium', '--scenario', path, '--seed', 1, '--deltas', '-0.5',
                '--Ks', 2, '--out', tmp_path) == 3
    assert _run('experiment', 'phase_transition', '--scenario', path, '--seed', 1, '--t-f', 2.0, '--t-s', 1.0,
                '--Ks', 8, '--out', tmp_path) == 3


def test_convergence_error_exit_code(pair_document, write_scenario, tmp_path):
    document = copy.deepcopy(pair_document)
    document['solver'] = {'n_starts': 1, 'max_iters': 1, 'grad_tol': 1e-14}
    out = tmp_path / 'out'
    assert _run('solve', '--scenario', write_scenario(document), '--inner-only', '--x', 3.0, '--out', out) == 4
    assert (out / 'inner.yaml').exists()


def test_experiment_outputs_identical_across_jobs(pair_document, write_scenario, tmp_path):
    path = write_scenario(pair_document)
    runs = []
    for jobs in (1, 2, 1):
        out = tmp_path / f'run{len(runs)}'
        assert _run('experiment', 'tradeoff', '--scenario', path, '--seed', 3, '--Ks', '2,4', '--jobs', jobs,
                    '--out', out) == 0
        runs.append(out)
    for name in ('tradeoff.csv', 'tradeoff_config.yaml'):
        contents = {(run / name).read_bytes() for run in runs}
        assert len(contents) == 1


def test_experiment_csv_format(pair_document, write_scenario, tmp_path):
    out = tmp_path / 'out'
    assert _run('experiment', 'tail_premium', '--scenario', write_scenario(pair_document), '--seed', 1,
                '--Ks', '2,4', '--deltas', '0.5,1', '--out', out) == 0
    text = (out / 'tail_premium.csv').read_text()
    assert '\r' not in text
    assert text.splitlines()[0] == 'K,Delta,delta_star,premium,premium_scaled,psi_gap,P_at_least_one_slow'
    assert len(text.splitlines()) == 5
    config = yaml.safe_load((out / 'tail_premium_config.yaml').read_text())
    assert config['seed'] == 1
    assert config['arguments']['Ks'] == [2, 4]
    assert 'clients' in config['scenario']


def test_generate_round_trip(write_scenario, tmp_path):
    source = write_scenario({'system': {'sample_size': 3}, 'generator': {'n_clients': 4, 'seed': 2}})
    out = tmp_path / 'generated'
    assert _run('generate', '--scenario', source, '--out', out) == 0
    generated = out / 'scenario.yaml'
    document = yaml.safe_load(generated.read_text())
    assert len(document['clients']) == 4
    assert _run('latency', '--scenario', generated, '--x', 2.0, '--out', tmp_path / 'lat') == 0


def test_generate_needs_generator(pair_document, write_scenario, tmp_path):
    assert _run('generate', '--scenario', write_scenario(pair_document), '--out', tmp_path) == 2


def test_inner_solve_uses_omega_at_requested_K(pair_document, write_scenario, tmp_path):
    document = copy.deepcopy(pair_document)
    del document['convergence']
    document['convergence_params'] = {'smoothness': 2.0, 'strong_convexity': 1.0, 'local_epochs': 1}
    path = write_scenario(document)
    for K, expected in ((2, 1.0 + 2.0), (20, 0.1 + 2.0)):
        out = tmp_path / f'K{K}'
        assert _run('solve', '--scenario', path, '--inner-only', '--x', 5.0, '--K', K, '--out', out,
                    '--jobs', 1) == 0
        result = yaml.safe_load((out / 'inner.yaml').read_text())['result']
        assert result['q'] == pytest.approx([0.5, 0.5])
        assert result['g'] == pytest.approx(expected, rel=1e-12)
