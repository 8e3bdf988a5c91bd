"""Registry of the estimators an experiment can select.

Each entry knows how to run on the grouped reports of one (n, trial) point,
whether its raw output goes through post-processing, and which mechanism
mixtures it applies to.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

from ldp_unifier.distributions import Distribution
from ldp_unifier.estimators import (
    EstimatorConfig,
    cm_ibu,
    cm_inv,
    cm_rappor_grouped,
    combine_results,
    gibu,
)
from ldp_unifier.mechanisms import (
    Channel,
    MatrixChannel,
    MechanismGroup,
    RapporChannel,
    is_invertible,
)
from ldp_unifier.postprocess import postprocess

logger = logging.getLogger('ldp_unifier.suite')


@dataclass(frozen=True)
class Outcome:
    estimate: Distribution
    iterations: Optional[int] = None


Runner = Callable[[Sequence[MechanismGroup], EstimatorConfig, str], Outcome]
# (channels of the mixture, their weights) -> reason the estimator cannot run, or None
Check = Callable[[Sequence[Channel], Sequence[float]], Optional[str]]


@dataclass(frozen=True)
class EstimatorEntry:
    name: str
    runner: Runner
    post_processed: bool
    check: Check


ESTIMATORS: Dict[str, EstimatorEntry] = {}


def estimator(name: str, post_processed: bool, check: Check):
    def register(fn: Runner) -> Runner:
        ESTIMATORS[name] = EstimatorEntry(name, fn, post_processed, check)
        return fn
    return register


def _any(channels, weights) -> Optional[str]:
    return None


def _all_rappor(channels, weights) -> Optional[str]:
    if not all(isinstance(c, RapporChannel) for c in channels):
        return "needs every mechanism to be RAPPOR"
    return None


def _all_dense(channels, weights) -> Optional[str]:
    if not all(isinstance(c, MatrixChannel) for c in channels):
        return "needs dense channels (RAPPOR is implicit)"
    if len({c.matrix.shape for c in channels}) != 1:
        return "needs channels over one shared output alphabet"
    return None


def _each_invertible(channels, weights) -> Optional[str]:
    for c in channels:
        if not is_invertible(c):
            return f"the {c.family} channel with parameter {c.parameter} cannot be inverted"
    return None


def _average_invertible(channels, weights) -> Optional[str]:
    reason = _all_dense(channels, weights)
    if reason:
        return reason
    avg = sum(w * c.matrix for c, w in zip(channels, weights)) / sum(weights)
    if not is_invertible(MatrixChannel(avg)):
        return "the average channel of the mixture is singular"
    return None


@estimator('cr_inv', post_processed=True, check=_each_invertible)
def run_cr_inv(groups, cfg, post) -> Outcome:
    return Outcome(combine_results('inv', groups, cfg, post))


@estimator('cr_ibu', post_processed=False, check=_any)
def run_cr_ibu(groups, cfg, post) -> Outcome:
    return Outcome(combine_results('ibu', groups, cfg))


@estimator('cr_rappor', post_processed=True, check=_all_rappor)
def run_cr_rappor(groups, cfg, post) -> Outcome:
    return Outcome(combine_results('rappor', groups, cfg, post))


@estimator('cm_inv', post_processed=True, check=_average_invertible)
def run_cm_inv(groups, cfg, post) -> Outcome:
    return Outcome(postprocess(post, cm_inv(groups)))


@estimator('cm_ibu', post_processed=False, check=_all_dense)
def run_cm_ibu(groups, cfg, post) -> Outcome:
    result = cm_ibu(groups, cfg)
    return Outcome(result.estimate, result.iterations)


@estimator('cm_rappor', post_processed=True, check=_all_rappor)
def run_cm_rappor(groups, cfg, post) -> Outcome:
    return Outcome(postprocess(post, cm_rappor_grouped(groups)))


@estimator('gibu', post_processed=False, check=_any)
def run_gibu(groups, cfg, post) -> Outcome:
    result = gibu(groups, cfg)
    return Outcome(result.estimate, result.iterations)


def inapplicable(names: Sequence[str], channels: Sequence[Channel], weights: Sequence[float]) -> List[str]:
    """One message per selected estimator that cannot run on the mixture."""
    problems = []
    for name in names:
        reason = ESTIMATORS[name].check(channels, weights)
        if reason:
            logger.error(f"{name} is not applicable: {reason}")
            problems.append(f"{name}: {reason}")
    return problems
