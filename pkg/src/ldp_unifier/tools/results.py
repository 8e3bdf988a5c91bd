import csv
import logging
from pathlib import Path
from typing import Iterable, List, Literal, Union

import pandas as pd

from ldp_unifier.errors import UnifierError
from ldp_unifier.guardrails import ResultRow

logger = logging.getLogger('ldp_unifier.tools')

HEADER = ["n", "trial", "estimator", "post", "metric", "value", "iterations", "wall_ms"]
Statistic = Literal['median', 'mean']


def format_value(v: float) -> str:
    return format(v, '.17g')


def emit_csv(rows: Iterable[ResultRow], path: Union[str, Path]) -> int:
    """Write result rows with full float precision and LF line endings."""
    count = 0
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            writer = csv.writer(f, lineterminator='\n')
            writer.writerow(HEADER)
            for r in rows:
                writer.writerow([
                    r.n, r.trial, r.estimator, r.post, r.metric,
                    format_value(r.value),
                    '' if r.iterations is None else r.iterations,
                    r.wall_ms,
                ])
                count += 1
    except OSError as e:
        logger.error(f"Writing results to {path} failed: {e}")
        raise
    logger.info(f"Wrote {count} result rows to {path}")
    return count


def load_results(path: Union[str, Path]) -> List[ResultRow]:
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != HEADER:
            raise UnifierError(f"{path} is not a results file (header {reader.fieldnames})")
        return [
            ResultRow(
                n=int(r['n']),
                trial=int(r['trial']),
                estimator=r['estimator'],
                post=r['post'],
                metric=r['metric'],
                value=float(r['value']),
                iterations=int(r['iterations']) if r['iterations'] else None,
                wall_ms=int(r['wall_ms']),
            )
            for r in reader
        ]


def aggregate(src: Union[str, Path], dest: Union[str, Path], stat: Statistic = 'median') -> pd.DataFrame:
    """One row per (n, estimator, post, metric) with the chosen statistic over trials.

    The output is whitespace-separated so gnuplot can read it directly.
    """
    if stat not in ('median', 'mean'):
        raise UnifierError(f"unknown statistic {stat!r}")
    df = pd.read_csv(src)
    missing = set(HEADER) - set(df.columns)
    if missing:
        raise UnifierError(f"{src} lacks columns {sorted(missing)}")
    grouped = df.groupby(['n', 'estimator', 'post', 'metric'], sort=True)['value']
    out = grouped.agg(stat).reset_index().rename(columns={'value': stat})
    out['trials'] = grouped.size().to_numpy()
    Path(dest).parent.mkdir(parents=True, exist_ok=True)
    out.to_csv(dest, sep=' ', index=False, lineterminator='\n', float_format='%.17g')
    logger.info(f"Aggregated {len(df)} rows into {len(out)} {stat} rows at {dest}")
    return out
