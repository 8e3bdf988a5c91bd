import pandas as pd
import pytest

from ldp_unifier.errors import UnifierError
from ldp_unifier.guardrails import ResultRow
from ldp_unifier.tools.results import HEADER, aggregate, emit_csv, load_results


def row(trial, value, n=100, estimator='gibu', post='none', iterations=12):
    return ResultRow(n=n, trial=trial, estimator=estimator, post=post, metric='emd',
                     value=value, iterations=iterations, wall_ms=3)


def test_empty_rows_give_header_only(tmp_path):
    path = tmp_path / 'out.csv'
    assert emit_csv([], path) == 0
    assert path.read_bytes() == (','.join(HEADER) + '\n').encode()


def test_one_row_gives_two_lines(tmp_path):
    path = tmp_path / 'nested' / 'out.csv'
    emit_csv([row(0, 0.1, iterations=None)], path)
    lines = path.read_bytes().split(b'\n')
    assert lines == [b'n,trial,estimator,post,metric,value,iterations,wall_ms', b'100,0,gibu,none,emd,0.10000000000000001,,3', b'']


def test_rows_survive_a_round_trip(tmp_path):
    rows = [row(0, 1 / 3), row(1, 2.0 ** -40, iterations=None), row(2, 12345.678901234567)]
    path = tmp_path / 'out.csv'
    emit_csv(rows, path)
    assert load_results(path) == rows


def test_load_rejects_other_files(tmp_path):
    path = tmp_path / 'x.csv'
    path.write_text("a,b\n1,2\n", encoding='utf-8')
    with pytest.raises(UnifierError):
        load_results(path)


@pytest.mark.parametrize('stat, expected', [('median', 2.0), ('mean', 13 / 3)])
def test_aggregate(tmp_path, stat, expected):
    src, dest = tmp_path / 'rows.csv', tmp_path / 'agg.txt'
    emit_csv([row(0, 1.0), row(1, 10.0), row(2, 2.0), row(0, 5.0, n=200)], src)
    out = aggregate(src, dest, stat)
    assert list(out.columns) == ['n', 'estimator', 'post', 'metric', stat, 'trials']
    back = pd.read_csv(dest, sep=' ')
    first = back.iloc[0]
    assert (first['n'], first['trials']) == (100, 3)
    assert first[stat] == pytest.approx(expected)
    assert back.iloc[1][stat] == 5.0


def test_aggregate_rejects_unknown_statistic(tmp_path):
    src = tmp_path / 'rows.csv'
    emit_csv([row(0, 1.0)], src)
    with pytest.raises(UnifierError):
        aggregate(src, tmp_path / 'agg.txt', 'max')
