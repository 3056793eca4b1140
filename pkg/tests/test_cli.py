import json

import pytest
from click.testing import CliRunner

from config import TestingConfig
from shotnoise.cli import dispatch, shotnoise

UNIT_MODEL = {
    'name': 'unit-poisson',
    'd': 1,
    'T': 1.0,
    'atoms': [{'id': 'unit', 'payload': [1.0], 'weight': 1.0}],
    'shape': {'family': 'instantaneous'},
}

GROWTH_MODEL = {
    'd': 1,
    'T': 1.0,
    'atoms': [{'id': 'c', 'payload': [0.7], 'weight': 1.0}],
    'shape': {'family': 'instantaneous'},
    'shot_value': {'family': 'linear_growth'},
}


@pytest.fixture
def invoke(settings):
    runner = CliRunner(mix_stderr=False)

    def _invoke(*args, obj=None):
        return runner.invoke(shotnoise, list(args), obj=obj or settings)
    return _invoke


def run_config(command, section, model=None, **extra):
    document = {'command': command, 'model': model or UNIT_MODEL, command: section}
    document.update(extra)
    return document


def test_simulate_is_reproducible(invoke, write_json, tmp_path):
    config = write_json('simulate.json', run_config('simulate', {'epsilon': 0.05}, seed=17))
    first = invoke('simulate', '--config', str(config), '--out', str(tmp_path / 'a'))
    second = invoke('simulate', '--config', str(config), '--out', str(tmp_path / 'b'))
    assert first.exit_code == 0, first.stderr
    assert second.exit_code == 0, second.stderr
    for name in ('path.csv', 'events.csv'):
        assert (tmp_path / 'a' / name).read_bytes() == (tmp_path / 'b' / name).read_bytes()
    assert (tmp_path / 'a' / 'path.csv').read_text().startswith('t,x1\n')
    assert (tmp_path / 'a' / 'events.csv').read_text().startswith('s,atom_id\n')
    manifest = json.loads((tmp_path / 'a' / 'manifest.json').read_text())
    assert manifest['seed'] == 17
    assert set(manifest['artifacts']) >= {'path.csv', 'events.csv', 'validation.json'}


def test_seed_override(invoke, write_json, tmp_path):
    config = write_json('simulate.json', run_config('simulate', {'epsilon': 0.05}, seed=17))
    result = invoke('simulate', '--config', str(config), '--out', str(tmp_path / 'run'), '--seed', '99')
    assert result.exit_code == 0, result.stderr
    assert json.loads((tmp_path / 'run' / 'manifest.json').read_text())['seed'] == 99


def test_model_file_is_resolved_next_to_config(invoke, write_json, tmp_path):
    write_json('model.json', UNIT_MODEL)
    config = write_json('fluid.json', {'command': 'fluid', 'model': 'model.json', 'fluid': {'grid_points': 4}})
    result = invoke('fluid', '--config', str(config), '--out', str(tmp_path / 'run'))
    assert result.exit_code == 0, result.stderr
    lines = (tmp_path / 'run' / 'fluid.csv').read_text().splitlines()
    assert lines[0] == 't,xi1'
    t, xi = lines[-1].split(',')
    assert t == '1'
    assert float(xi) == pytest.approx(1.0, abs=1e-12)
    manifest = json.loads((tmp_path / 'run' / 'manifest.json').read_text())
    assert 'model' in manifest['inputs']


def test_mc_is_reproducible(invoke, write_json, tmp_path):
    section = {'epsilon': 0.1, 'threshold': [1.5], 'replications': 200}
    config = write_json('mc.json', run_config('mc', section, seed=5))
    outputs = []
    for name, threads in (('one', '1'), ('four', '4')):
        result = invoke('mc', '--config', str(config), '--out', str(tmp_path / name), '--threads', threads)
        assert result.exit_code == 0, result.stderr
        outputs.append((tmp_path / name / 'mc.csv').read_bytes())
    assert outputs[0] == outputs[1]


def test_mc_decay_table(invoke, write_json, tmp_path):
    section = {'epsilons': [0.1, 0.05, 0.025], 'threshold': [2.0], 'replications': 1, 'method': 'exact'}
    config = write_json('mc.json', run_config('mc', section))
    result = invoke('mc', '--config', str(config), '--out', str(tmp_path / 'run'))
    assert result.exit_code == 0, result.stderr
    lines = (tmp_path / 'run' / 'decay.csv').read_text().splitlines()
    assert lines[0] == 'epsilon,p_hat,se,neg_eps_log_p'
    assert len(lines) == 4


def test_rate_artifacts(invoke, write_json, tmp_path):
    config = write_json('rate.json', run_config('rate', {'terminal': [2.0], 'cells': 4}))
    result = invoke('rate', '--config', str(config), '--out', str(tmp_path / 'run'))
    assert result.exit_code == 0, result.stderr
    summary = json.loads((tmp_path / 'run' / 'rate.json').read_text())
    assert summary['converged'] is True
    assert summary['cost'] == pytest.approx(summary['legendre_oracle'], abs=1e-6)
    control = json.loads((tmp_path / 'run' / 'control.json').read_text())
    assert set(control) == {'time_grid', 'values'}
    assert len(control['values']) == 4
    assert (tmp_path / 'run' / 'fluid.csv').read_text().startswith('t,xi1\n')


@pytest.mark.parametrize('content', [
    '{"command": "simulate", ',
    json.dumps(run_config('simulate', {'epsilon': 0.05}, colour='blue')),
    json.dumps(run_config('simulate', {'epsilon': -1.0})),
    json.dumps(run_config('fluid', {})),
    json.dumps({'command': 'simulate', 'model': 'missing.json', 'simulate': {'epsilon': 0.1}}),
    json.dumps({'command': 'simulate', 'simulate': {'epsilon': 0.1}}),
    json.dumps({'command': 'simulate', 'model': UNIT_MODEL}),
])
def test_bad_config_exits_2(invoke, write_json, tmp_path, content):
    config = write_json('bad.json', content)
    result = invoke('simulate', '--config', str(config), '--out', str(tmp_path / 'run'))
    assert result.exit_code == 2
    assert 'Error' in result.stderr


def test_missing_config_exits_2(invoke, tmp_path):
    result = invoke('simulate', '--config', str(tmp_path / 'nowhere.json'))
    assert result.exit_code == 2


def test_rejected_model_exits_2(invoke, write_json, tmp_path):
    model = dict(GROWTH_MODEL, envelopes={'lipschitz': {'c': 0.01}})
    config = write_json('fluid.json', run_config('fluid', {}, model=model))
    result = invoke('fluid', '--config', str(config), '--out', str(tmp_path / 'run'))
    assert result.exit_code == 2
    report = json.loads((tmp_path / 'run' / 'validation.json').read_text())
    assert report['accepted'] is False


def test_non_convergence_exits_3(invoke, write_json, tmp_path):
    config = write_json('fluid.json', run_config('fluid', {}, model=GROWTH_MODEL))
    result = invoke('fluid', '--config', str(config), '--out', str(tmp_path / 'run'),
                    obj=TestingConfig(PICARD_MAX_ITER=1))
    assert result.exit_code == 3


def test_infeasible_rate_exits_4(invoke, write_json, tmp_path):
    model = {'d': 2, 'T': 1.0, 'atoms': [{'id': 'x', 'payload': [1.0, 0.0], 'weight': 1.0}],
             'shape': {'family': 'instantaneous'}}
    config = write_json('rate.json', run_config('rate', {'terminal': [1.0, 1.0], 'cells': 2, 'max_rounds': 5},
                                                model=model))
    result = invoke('rate', '--config', str(config), '--out', str(tmp_path / 'run'))
    assert result.exit_code == 4


def test_verify_subset_passes(invoke, write_json, tmp_path):
    config = write_json('verify.json', run_config('verify', {'criteria': ['A2', 'A7']}))
    result = invoke('verify', '--config', str(config), '--out', str(tmp_path / 'run'))
    assert result.exit_code == 0, result.stderr
    assert 'overall: PASS' in result.stdout
    assert (tmp_path / 'run' / 'verify.csv').read_text().startswith('criterion,passed,value,bound\n')


def test_verify_failure_exits_1(invoke, write_json, tmp_path):
    config = write_json('verify.json', run_config('verify', {'criteria': ['A4'], 'a4_tolerance': 0.0015}))
    result = invoke('verify', '--config', str(config), '--out', str(tmp_path / 'run'))
    assert result.exit_code == 1
    assert 'failed criteria: A4' in result.stderr


def test_dispatch_returns_exit_codes(write_json, tmp_path, monkeypatch):
    monkeypatch.setenv('SHOTNOISE_ENV', 'testing')
    config = write_json('fluid.json', run_config('fluid', {'grid_points': 4}))
    assert dispatch(['fluid', '--config', str(config), '--out', str(tmp_path / 'run')]) == 0
    assert dispatch(['fluid', '--config', str(tmp_path / 'nowhere.json')]) == 2
    assert dispatch(['explode']) == 2
