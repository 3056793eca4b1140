import json

import numpy as np
import pytest

from shotnoise.errors import ConfigError
from shotnoise.models import DecayTable, EventSet, MCReport, Path
from shotnoise.services.export_service import ExportService, sha256_bytes, to_json_text


@pytest.fixture
def export(tmp_path):
    return ExportService(tmp_path / 'out')


def sample_path():
    events = EventSet(0.1, np.array([0.25, 0.5]), np.array([0, 1]), ('low', 'high'), 1.0, 0)
    values = np.array([[0.0], [0.1], [0.1]])
    return Path(0.1, np.array([0.0, 0.5, 1.0]), values, events)


def test_path_and_events_csv(export):
    path = sample_path()
    target = export.write_path(path)
    lines = target.read_text().splitlines()
    assert lines[0] == 't,x1'
    assert lines[2] == '0.5,0.10000000000000001'
    assert export.write_events(path.events).read_text() == 's,atom_id\n0.25,low\n0.5,high\n'


def test_reports_csv_omits_wall_time(export):
    report = MCReport(0.1, 'x1>=2.0', 100, 0.02, 0.014, 0.7, 'naive', 3, wall_time=1.25, hits=2, upper_bound=0.05)
    header = export.write_reports([report]).read_text().splitlines()[0].split(',')
    assert 'wall_time' not in header and 'workers' not in header
    assert header[:3] == ['epsilon', 'event', 'replications']


def test_decay_csv(export):
    table = DecayTable(rows=[{'epsilon': 0.1, 'p_hat': 0.5, 'se': 0.01, 'neg_eps_log_p': 0.07, 'flagged': False}],
                       intercept=0.0, slope=0.7, method='naive', event='x1>=1.0')
    assert export.write_decay(table).read_text().splitlines()[0] == 'epsilon,p_hat,se,neg_eps_log_p'


def test_manifest(export):
    export.write_json({'b': np.float64(1.5), 'a': np.arange(2)}, 'result.json')
    manifest = json.loads(export.write_manifest('simulate', {'seed': 4}, {'config': b'{}'}, 4, 2, 0.5).read_text())
    assert set(manifest) == {'command', 'seed', 'threads', 'wall_time', 'inputs', 'config', 'versions', 'artifacts'}
    assert manifest['inputs']['config'] == sha256_bytes(b'{}')
    assert manifest['artifacts']['result.json'] == sha256_bytes((export.out_dir / 'result.json').read_bytes())
    assert {'shotnoise', 'python', 'numpy', 'scipy', 'pandas'} <= set(manifest['versions'])


def test_json_is_sorted_and_stable():
    text = to_json_text({'b': 1, 'a': np.array([0.1])})
    assert text == '{\n  "a": [\n    0.1\n  ],\n  "b": 1\n}\n'
    with pytest.raises(TypeError):
        to_json_text({'x': object()})


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / 'file'
    blocker.write_text('')
    with pytest.raises(ConfigError):
        ExportService(blocker / 'out')
