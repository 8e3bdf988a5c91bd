"""Experiment pipeline: build the mechanism mixture, sample users, obfuscate,
estimate and score, for every (n, trial) point of a configuration."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ldp_unifier.alphabet import LinearAlphabet, PlanarGrid
from ldp_unifier.distributions import (
    Distribution,
    SampleSet,
    binomial_distribution,
    draw,
    split_seed,
)
from ldp_unifier.errors import ConfigError, DomainError, LinearProgramError
from ldp_unifier.estimators import EstimatorConfig
from ldp_unifier.guardrails import ExperimentConfig, MechanismSpec, ResultRow
from ldp_unifier.ingest import load_samples
from ldp_unifier.mechanisms import (
    Channel,
    MechanismGroup,
    geometric_linear,
    geometric_planar,
    krr,
    rappor,
    shokri,
)
from ldp_unifier.metrics import emd, l2_sq_error, total_variation
from ldp_unifier.suite import ESTIMATORS, inapplicable

logger = logging.getLogger('ldp_unifier.flow')

NO_POST = 'none'


def build_channel(spec: MechanismSpec, alphabet) -> Channel:
    k = alphabet.size
    if spec.family == 'krr':
        return krr(k, spec.parameter)
    if spec.family == 'rappor':
        return rappor(k, spec.parameter)
    if spec.family == 'geom_linear':
        if not isinstance(alphabet, LinearAlphabet):
            raise ConfigError("geom_linear needs a linear alphabet")
        return geometric_linear(k, spec.parameter, alphabet.spacing)
    if spec.family == 'geom_planar':
        if not isinstance(alphabet, PlanarGrid):
            raise ConfigError("geom_planar needs a planar alphabet")
        return geometric_planar(alphabet, spec.parameter)
    return shokri(alphabet, None, spec.parameter)


@dataclass(frozen=True, eq=False)
class Experiment:
    config: ExperimentConfig
    channels: Tuple[Channel, ...]
    weights: np.ndarray
    truth: Distribution
    population: Optional[SampleSet] = None

    @property
    def alphabet(self):
        return self.config.alphabet


def build_experiment(config: ExperimentConfig) -> Experiment:
    """Channels, truth and applicability checks; fails before any sampling."""
    alphabet = config.alphabet
    cache: Dict[Tuple[str, float], Channel] = {}
    channels = []
    for spec in config.mechanisms:
        key = (spec.family, spec.parameter)
        if key not in cache:
            try:
                cache[key] = build_channel(spec, alphabet)
            except (DomainError, LinearProgramError) as e:
                raise ConfigError(f"cannot build {spec.family} mechanism with parameter {spec.parameter}: {e}")
        channels.append(cache[key])
    weights = np.array([m.weight for m in config.mechanisms])

    problems = inapplicable(config.estimators, channels, weights)
    if problems:
        raise ConfigError("estimators do not apply to this mixture: " + "; ".join(problems))
    _check_metrics(config)

    population = None
    data = config.data
    if data.source == 'gowalla':
        if not isinstance(alphabet, PlanarGrid) or alphabet.bbox is None:
            raise ConfigError("gowalla data needs a planar alphabet with a bbox")
        population = load_samples(alphabet, data.path, data.cell_counts, data.one_per_user)
        if len(population) == 0:
            raise ConfigError("no check-in falls inside the grid")
        if data.n_schedule[-1] > len(population):
            raise ConfigError(f"n={data.n_schedule[-1]} exceeds the {len(population)} binned check-ins")
        counts = np.bincount(population.values, minlength=alphabet.size)
        truth = Distribution(counts / counts.sum())
    else:
        truth = binomial_distribution(alphabet.size, data.alpha)
    return Experiment(config, tuple(channels), weights, truth, population)


def _check_metrics(config: ExperimentConfig) -> None:
    alphabet = config.alphabet
    if 'emd' not in config.metrics or not isinstance(alphabet, PlanarGrid):
        return
    factor = config.emd.coarsen or 1
    if alphabet.cols % factor or alphabet.rows % factor:
        raise ConfigError(f"emd.coarsen={factor} does not divide the {alphabet.cols}x{alphabet.rows} grid")
    cells = alphabet.size // (factor * factor)
    if cells > config.emd.exact_cap:
        raise ConfigError(
            f"planar EMD on {cells} cells exceeds emd.exact_cap={config.emd.exact_cap}; "
            f"set emd.coarsen (e.g. 2 turns 24x16 into 12x8)"
        )


def assign_mechanisms(n: int, weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Users per mechanism: floor(w n) each, the remainder by one weighted draw without replacement."""
    raw = weights / weights.sum() * n
    counts = np.floor(raw + 1e-9).astype(np.int64)
    while counts.sum() > n:
        counts[np.argmax(counts)] -= 1
    remainder = int(n - counts.sum())
    if remainder:
        frac = np.clip(raw - counts, 0.0, None) + 1e-12
        chosen = rng.choice(weights.size, size=remainder, replace=False, p=frac / frac.sum())
        counts[chosen] += 1
    return counts


def _secrets(exp: Experiment, n: int, rng: np.random.Generator) -> np.ndarray:
    if exp.population is None:
        return draw(exp.truth, n, rng)
    picked = rng.choice(len(exp.population), size=n, replace=False)
    return exp.population.values[picked]


def _score(exp: Experiment, metric: str, estimate: Distribution) -> float:
    if metric == 'l2sq':
        return l2_sq_error(estimate, exp.truth)
    if metric == 'tv':
        return total_variation(estimate, exp.truth)
    return emd(estimate, exp.truth, exp.alphabet, exp.config.emd.exact_cap, exp.config.emd.coarsen)


def run_point(exp: Experiment, n_index: int, trial: int, root: int) -> List[ResultRow]:
    config = exp.config
    n = config.data.n_schedule[n_index]
    rng = split_seed(root, n_index, trial)
    secrets = _secrets(exp, n, rng)
    counts = assign_mechanisms(n, exp.weights, rng)

    groups = []
    start = 0
    for channel, count in zip(exp.channels, counts):
        if count == 0:
            continue
        reports = channel.sample(secrets[start:start + count], rng)
        groups.append(MechanismGroup.from_reports(channel, reports))
        start += count

    cfg = EstimatorConfig(delta=config.estimator.delta, max_iters=config.estimator.max_iters)
    rows = []
    for name in config.estimators:
        entry = ESTIMATORS[name]
        for post in (config.post_methods if entry.post_processed else [NO_POST]):
            began = time.perf_counter()
            outcome = entry.runner(groups, cfg, post)
            wall_ms = int(round((time.perf_counter() - began) * 1000)) if config.timing else 0
            for metric in config.metrics:
                rows.append(ResultRow(
                    n=n,
                    trial=trial,
                    estimator=name,
                    post=post,
                    metric=metric,
                    value=_score(exp, metric, outcome.estimate),
                    iterations=outcome.iterations,
                    wall_ms=wall_ms,
                ))
    return rows


def run(config: ExperimentConfig, threads: int = 1, seed: Optional[int] = None) -> List[ResultRow]:
    """All result rows in (n, trial, estimator) order, whatever the completion order."""
    exp = build_experiment(config)
    root = config.data.seed if seed is None else seed
    points = [
        (n_index, trial)
        for n_index in range(len(config.data.n_schedule))
        for trial in range(config.data.trials)
    ]
    logger.info(
        f"Running {len(points)} points ({len(config.data.n_schedule)} sizes x {config.data.trials} trials) "
        f"with {len(config.estimators)} estimators on {max(threads, 1)} threads"
    )
    with ThreadPoolExecutor(max_workers=max(threads, 1)) as pool:
        per_point = list(pool.map(lambda p: run_point(exp, p[0], p[1], root), points))
    rows = [row for point_rows in per_point for row in point_rows]
    logger.info(f"Experiment finished with {len(rows)} rows")
    return rows
