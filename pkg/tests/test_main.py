import json
import logging
from pathlib import Path

import pytest
import yaml

from ldp_unifier.distributions import binomial_distribution
from ldp_unifier.errors import ConfigError
from ldp_unifier.flow import build_experiment, run
from ldp_unifier.main import default_threads, main, preset_names, preset_text, resolve_config
from ldp_unifier.metrics import prop2_bound

PRESET_PARAMETERS = {
    'rappor_high': [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0],
    'rappor_low': [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0],
    'krr_linear': [3.00, 3.54, 3.96, 4.34, 4.69, 5.06, 5.46, 5.93, 6.60, 8.08],
    'krr_planar': [3.05, 4.19, 4.81, 5.27, 5.67, 6.05, 6.44, 6.87, 7.40, 8.20],
    'geom_linear': [0.020, 0.025, 0.031, 0.039, 0.050, 0.065, 0.088, 0.131, 0.236, 0.869],
    'geom_planar': [0.190, 0.244, 0.310, 0.390, 0.493, 0.632, 0.835, 1.159, 1.762, 3.124],
    'geom_krr_linear': [0.065, 0.088, 0.131, 0.236, 0.869, 3.00, 3.54, 3.96, 4.34, 4.69],
    'geom_krr_planar': [0.632, 0.835, 1.159, 1.762, 3.124, 3.05, 4.19, 4.81, 5.27, 5.67],
    'shokri_linear': [1.0, 4.0, 7.0, 10.0, 13.0, 16.0, 19.0, 22.0, 24.5, 28.0],
    'shokri_planar': [0.3, 0.6, 0.9, 1.2, 1.5, 1.8, 2.1, 2.4, 2.7, 3.0],
}


@pytest.fixture(autouse=True)
def workdir(tmp_path, monkeypatch):
    # logs/ and .env are resolved against the working directory
    monkeypatch.chdir(tmp_path)
    for name in ('LDP_UNIFIER_THREADS', 'LDP_UNIFIER_LOG_FILE', 'LDP_UNIFIER_LOG_LEVEL'):
        # set first so teardown also removes values loaded from a .env
        monkeypatch.setenv(name, '')
        monkeypatch.delenv(name)
    return tmp_path


@pytest.fixture
def config_file(workdir):
    path = workdir / 'small.yaml'
    path.write_text(yaml.safe_dump({
        'alphabet': {'kind': 'linear', 'size': 4},
        'data': {'n_schedule': [100], 'trials': 2},
        'mechanisms': [{'family': 'krr', 'parameter': 1.5, 'weight': 1.0}],
        'estimators': ['cm_inv', 'gibu'],
        'metrics': ['l2sq'],
    }), encoding='utf-8')
    return path


def test_presets_ship_mechanism_parameters():
    assert preset_names() == sorted(PRESET_PARAMETERS)
    for name, expected in PRESET_PARAMETERS.items():
        raw = yaml.safe_load(preset_text(name))
        assert [m['parameter'] for m in raw['mechanisms']] == expected, name
        config = resolve_config(name)
        assert sum(m.weight for m in config.mechanisms) == pytest.approx(1.0)


def test_unknown_preset():
    with pytest.raises(ConfigError):
        resolve_config('no_such_preset')


def test_rappor_preset_row_accounting():
    config = resolve_config('rappor_high')
    config = config.model_copy(update={'data': config.data.model_copy(update={'n_schedule': [300], 'trials': 2})})
    rows = run(config)
    assert len(rows) == 3 * 1 * 2 * 2
    assert {r.estimator for r in rows} == {'cr_rappor', 'cm_rappor', 'gibu'}


def test_run_command(config_file, workdir):
    out = workdir / 'out' / 'rows.csv'
    assert main(['run', '--config', str(config_file), '--out', str(out)]) == 0
    first = out.read_bytes()
    assert len(first.splitlines()) == 1 + 2 * 2
    assert main(['run', '--config', str(config_file), '--out', str(out), '--threads', '2']) == 0
    assert out.read_bytes() == first
    assert (workdir / 'logs' / 'app.log').exists()


def test_config_errors_exit_with_one(workdir):
    bad = workdir / 'bad.yaml'
    bad.write_text(yaml.safe_dump({
        'alphabet': {'kind': 'linear', 'size': 4},
        'mechanisms': [{'family': 'krr', 'parameter': 1.0, 'weight': 0.7}],
        'estimators': ['gibu'],
    }), encoding='utf-8')
    assert main(['run', '--config', str(bad), '--out', 'x.csv']) == 1
    assert main(['run', '--config', str(workdir / 'missing.yaml'), '--out', 'x.csv']) == 1
    assert not (workdir / 'x.csv').exists()


def test_runtime_errors_exit_with_two(workdir):
    cfg = workdir / 'gowalla.yaml'
    cfg.write_text(yaml.safe_dump({
        'alphabet': {'kind': 'planar', 'cols': 2, 'rows': 2, 'cell_size': 1.0, 'bbox': [0.0, 0.018, 0.0, 0.018]},
        'data': {'source': 'gowalla', 'path': str(workdir / 'absent.txt'), 'n_schedule': [10], 'trials': 1},
        'mechanisms': [{'family': 'krr', 'parameter': 1.0, 'weight': 1.0}],
        'estimators': ['gibu'],
        'metrics': ['l2sq'],
    }), encoding='utf-8')
    assert main(['run', '--config', str(cfg), '--out', 'x.csv']) == 2


def test_presets_command(capsys):
    assert main(['presets', 'list']) == 0
    assert capsys.readouterr().out.split() == sorted(PRESET_PARAMETERS)
    assert main(['presets', 'show', 'krr_linear']) == 0
    assert 'krr' in capsys.readouterr().out
    assert main(['presets', 'show', 'nope']) == 1


def test_aggregate_command(config_file, workdir):
    rows = workdir / 'rows.csv'
    assert main(['run', '--config', str(config_file), '--out', str(rows)]) == 0
    assert main(['aggregate', '--in', str(rows), '--out', str(workdir / 'agg.txt'), '--stat', 'median']) == 0
    lines = (workdir / 'agg.txt').read_text(encoding='utf-8').splitlines()
    assert lines[0] == 'n estimator post metric median trials'
    assert len(lines) == 3


def test_bounds_command(capsys):
    assert main(['bounds', '--family', 'krr', '--eps', '2.0', '--k', '5', '--n', '1000']) == 0
    report = json.loads(capsys.readouterr().out)
    expected = prop2_bound(binomial_distribution(5, 0.5), 2.0, 1000, 5)
    assert report['bound_value'] == pytest.approx(expected.bound_value)
    assert report['n'] == 1000
    assert main(['bounds', '--family', 'rappor', '--eps', '-1', '--k', '5', '--n', '10']) == 1


def test_thread_count_from_environment(monkeypatch):
    assert default_threads() == 1
    monkeypatch.setenv('LDP_UNIFIER_THREADS', '3')
    assert default_threads() == 3
    monkeypatch.setenv('LDP_UNIFIER_THREADS', 'many')
    with pytest.raises(ConfigError):
        default_threads()


@pytest.mark.parametrize('name', ['krr_planar', 'geom_planar', 'geom_krr_planar'])
def test_gowalla_presets_fit_the_city(name):
    assert resolve_config(name).data.n_schedule == [1000, 2000, 5000, 10000]


def test_gowalla_preset_builds_from_cached_counts(workdir):
    cache = workdir / 'data' / 'sf_cells.csv'
    cache.parent.mkdir()
    cache.write_text('cell_index,count\n0,4000\n100,3500\n383,2500\n', encoding='utf-8')
    config = resolve_config('krr_planar')
    assert len(build_experiment(config).population) == 10_000
    too_many = config.model_copy(update={'data': config.data.model_copy(update={'n_schedule': [20_000]})})
    with pytest.raises(ConfigError):
        build_experiment(too_many)


def test_log_file_and_level_from_environment(config_file, workdir, monkeypatch):
    monkeypatch.setenv('LDP_UNIFIER_LOG_FILE', str(workdir / 'custom' / 'run.log'))
    monkeypatch.setenv('LDP_UNIFIER_LOG_LEVEL', 'warning')
    assert main(['run', '--config', str(config_file), '--out', 'rows.csv']) == 0
    assert (workdir / 'custom' / 'run.log').exists()
    assert not (workdir / 'logs').exists()
    assert logging.getLogger('ldp_unifier').level == logging.WARNING


def test_unknown_log_level_is_a_config_error(config_file, monkeypatch):
    monkeypatch.setenv('LDP_UNIFIER_LOG_LEVEL', 'chatty')
    assert main(['run', '--config', str(config_file), '--out', 'rows.csv']) == 1
    assert not Path('rows.csv').exists()


def test_dotenv_in_working_directory_configures_logging(config_file, workdir):
    (workdir / '.env').write_text('LDP_UNIFIER_LOG_FILE=from_env/app.log\n', encoding='utf-8')
    assert main(['run', '--config', str(config_file), '--out', 'rows.csv']) == 0
    assert (workdir / 'from_env' / 'app.log').exists()


def test_dotenv_in_parent_directory_is_ignored(config_file, workdir, monkeypatch):
    (workdir / '.env').write_text('LDP_UNIFIER_LOG_FILE=parent/app.log\n', encoding='utf-8')
    child = workdir / 'child'
    child.mkdir()
    monkeypatch.chdir(child)
    assert main(['run', '--config', str(config_file), '--out', 'rows.csv']) == 0
    assert (child / 'logs' / 'app.log').exists()
    assert not (workdir / 'parent').exists()
