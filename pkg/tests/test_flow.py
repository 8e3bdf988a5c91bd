import numpy as np
import pytest

from ldp_unifier.distributions import split_seed
from ldp_unifier.errors import ConfigError
from ldp_unifier.flow import assign_mechanisms, build_experiment, run
from ldp_unifier.guardrails import ExperimentConfig
from ldp_unifier.mechanisms import MatrixChannel, krr, rappor
from ldp_unifier.suite import ESTIMATORS, inapplicable
from ldp_unifier.tools.results import emit_csv


def make_config(**overrides):
    raw = {
        'alphabet': {'kind': 'linear', 'size': 5},
        'data': {'n_schedule': [200, 400], 'trials': 2, 'seed': 7},
        'mechanisms': [
            {'family': 'krr', 'parameter': 2.0, 'weight': 0.5},
            {'family': 'geom_linear', 'parameter': 0.8, 'weight': 0.5},
        ],
        'estimators': ['cr_inv', 'cr_ibu', 'cm_inv', 'cm_ibu', 'gibu'],
        'post_processing': 'both',
        'metrics': ['emd', 'l2sq'],
    }
    raw.update(overrides)
    return ExperimentConfig.parse_raw_config(raw)


def test_row_accounting():
    rows = run(make_config())
    # cr_inv and cm_inv run once per post-processing method
    assert len(rows) == 2 * 2 * 7 * 2
    assert {r.post for r in rows if r.estimator == 'gibu'} == {'none'}
    assert {r.post for r in rows if r.estimator == 'cm_inv'} == {'projection', 'normalization'}
    assert all(r.value >= 0 and r.wall_ms == 0 for r in rows)
    assert all(r.iterations is not None for r in rows if r.estimator in ('cm_ibu', 'gibu'))
    assert all(r.iterations is None for r in rows if r.estimator == 'cm_inv')
    order = [(r.n, r.trial) for r in rows]
    assert order == sorted(order)


def test_runs_are_reproducible(tmp_path):
    config = make_config()
    emit_csv(run(config, threads=1), tmp_path / 'a.csv')
    emit_csv(run(config, threads=3), tmp_path / 'b.csv')
    emit_csv(run(config, threads=1, seed=8), tmp_path / 'c.csv')
    a = (tmp_path / 'a.csv').read_bytes()
    assert a == (tmp_path / 'b.csv').read_bytes()
    assert a != (tmp_path / 'c.csv').read_bytes()


def test_timing_is_opt_in():
    assert make_config().timing is False
    rows = run(make_config(timing=True, estimators=['gibu'], metrics=['emd']))
    assert all(r.wall_ms >= 0 for r in rows)
    untimed = run(make_config(estimators=['gibu'], metrics=['emd']))
    assert [r.model_copy(update={'wall_ms': 0}) for r in rows] == untimed


def test_near_noiseless_channel_recovers_truth():
    config = make_config(
        alphabet={'kind': 'linear', 'size': 3},
        data={'n_schedule': [100_000], 'trials': 1},
        mechanisms=[{'family': 'krr', 'parameter': 20.0, 'weight': 1.0}],
        estimators=['gibu'],
        metrics=['emd'],
    )
    (row,) = run(config)
    assert row.value < 0.01


def test_mismatched_estimator_fails_before_sampling():
    with pytest.raises(ConfigError, match='cm_rappor'):
        build_experiment(make_config(estimators=['gibu', 'cm_rappor']))


def test_geometric_family_must_fit_alphabet():
    config = make_config(
        mechanisms=[{'family': 'geom_planar', 'parameter': 0.5, 'weight': 1.0}],
        estimators=['gibu'],
    )
    with pytest.raises(ConfigError):
        build_experiment(config)


def test_planar_emd_needs_small_grid():
    config = make_config(
        alphabet={'kind': 'planar', 'cols': 24, 'rows': 16, 'cell_size': 0.5},
        mechanisms=[{'family': 'krr', 'parameter': 3.0, 'weight': 1.0}],
        estimators=['gibu'],
        metrics=['emd'],
    )
    with pytest.raises(ConfigError, match='exact_cap'):
        build_experiment(config)
    with pytest.raises(ConfigError, match='coarsen'):
        build_experiment(config.model_copy(update={'emd': config.emd.model_copy(update={'coarsen': 5})}))
    exp = build_experiment(config.model_copy(update={'emd': config.emd.model_copy(update={'coarsen': 2})}))
    assert exp.truth.size == 384


def test_identical_mechanisms_share_a_channel():
    config = make_config(mechanisms=[
        {'family': 'krr', 'parameter': 2.0, 'weight': 0.5},
        {'family': 'krr', 'parameter': 2.0, 'weight': 0.5},
    ])
    exp = build_experiment(config)
    assert exp.channels[0] is exp.channels[1]


def test_gowalla_truth_is_full_empirical(tmp_path):
    cells = tmp_path / 'cells.csv'
    cells.write_text("cell_index,count\n0,30\n3,10\n", encoding='utf-8')
    raw = {
        'alphabet': {'kind': 'planar', 'cols': 2, 'rows': 2, 'cell_size': 1.0, 'bbox': [0.0, 0.018, 0.0, 0.018]},
        'data': {'source': 'gowalla', 'cell_counts': str(cells), 'n_schedule': [20], 'trials': 1},
        'mechanisms': [{'family': 'krr', 'parameter': 1.0, 'weight': 1.0}],
        'estimators': ['gibu'],
        'metrics': ['l2sq'],
    }
    exp = build_experiment(ExperimentConfig.parse_raw_config(raw))
    np.testing.assert_allclose(exp.truth.probs, [0.75, 0.0, 0.0, 0.25])
    assert len(run(exp.config)) == 1
    raw['data']['n_schedule'] = [41]
    with pytest.raises(ConfigError):
        build_experiment(ExperimentConfig.parse_raw_config(raw))


@pytest.mark.parametrize('n', [0, 1, 10, 997])
def test_assignment_is_proportional(n):
    weights = np.array([0.5, 0.25, 0.125, 0.125])
    counts = assign_mechanisms(n, weights, split_seed(0, n))
    assert counts.sum() == n
    assert np.all(counts >= np.floor(weights * n))
    assert np.all(counts <= np.floor(weights * n) + 1)


def test_assignment_is_exact_when_divisible():
    counts = assign_mechanisms(1000, np.full(10, 0.1), split_seed(1))
    assert counts.tolist() == [100] * 10


def test_registry_and_applicability():
    assert set(ESTIMATORS) == {'cr_inv', 'cr_ibu', 'cr_rappor', 'cm_inv', 'cm_ibu', 'cm_rappor', 'gibu'}
    flat = MatrixChannel(np.full((2, 2), 0.5))
    problems = inapplicable(['cr_inv', 'cm_inv', 'gibu'], [flat], [1.0])
    assert [p.split(':')[0] for p in problems] == ['cr_inv', 'cm_inv']
    mixed = [krr(3, 1.0), rappor(3, 1.0)]
    names = ['cr_rappor', 'cm_rappor', 'cm_ibu', 'cr_ibu', 'gibu']
    assert [p.split(':')[0] for p in inapplicable(names, mixed, [0.5, 0.5])] == ['cr_rappor', 'cm_rappor', 'cm_ibu']
    assert inapplicable(['cr_rappor', 'cm_rappor', 'gibu'], [rappor(3, 1.0), rappor(3, 2.0)], [0.5, 0.5]) == []
