"""Estimators of the hidden distribution theta from obfuscated reports.

Closed-form estimators (INV, CM-INV, CM-RAPPOR) return raw vectors that may
leave the simplex; iterative ones (IBU, CM-IBU, GIBU) return an
:class:`EstimationResult` whose estimate is always a distribution.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Hashable, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import lu_solve

from ldp_unifier.distributions import Distribution, Empirical, pooled_empirical
from ldp_unifier.errors import DomainError, EstimationError, EstimatorMismatchError
from ldp_unifier.mechanisms import (
    BitVectorReport,
    Channel,
    MatrixChannel,
    MechanismGroup,
    RapporChannel,
    average_channel,
    krr_avg_eps,
    lu_checked,
    rappor_avg_eps,
)
from ldp_unifier.postprocess import PostProcessing, postprocess

logger = logging.getLogger('ldp_unifier.estimators')

UNDERFLOW = 1e-300
BaseEstimator = Literal['inv', 'ibu', 'rappor']


@dataclass(frozen=True, eq=False)
class EstimatorConfig:
    delta: float = 1e-10
    max_iters: int = 100_000
    init: Optional[Distribution] = None
    record_history: bool = False

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if self.max_iters < 1:
            raise DomainError("max_iters must be >= 1")
        if self.init is not None and np.any(self.init.probs <= 0):
            raise DomainError("initial distribution must have full support")

    def initial(self, k: int) -> np.ndarray:
        if self.init is None:
            return np.full(k, 1.0 / k)
        if self.init.size != k:
            raise DomainError(f"initial distribution has {self.init.size} elements, expected {k}")
        return np.array(self.init.probs)


@dataclass(frozen=True, eq=False)
class EstimationResult:
    estimate: Distribution
    iterations: int
    final_loglik: Optional[float]
    raw_estimate: np.ndarray
    converged: bool = True
    history: Tuple[Tuple[np.ndarray, float], ...] = ()


# A likelihood term is (columns M of shape k x s, weights w of length s):
# the group contributes sum_z w_z log((theta @ M)_z) to L.
Term = Tuple[np.ndarray, np.ndarray]


def _input_size(groups: Sequence[MechanismGroup]) -> int:
    if not groups:
        raise EstimationError("no mechanism groups given")
    sizes = {g.channel.input_size for g in groups}
    if len(sizes) != 1:
        raise EstimationError(f"groups disagree on the secret alphabet: sizes {sorted(sizes)}")
    return sizes.pop()


def _terms(groups: Sequence[MechanismGroup]) -> List[Term]:
    n = sum(g.count for g in groups)
    return [
        (g.channel.columns(g.observed.support), (g.count / n) * g.observed.weights)
        for g in groups
    ]


def _loglik(theta: np.ndarray, terms: Sequence[Term]) -> float:
    total = 0.0
    with np.errstate(divide='ignore'):
        for m, w in terms:
            total += float(np.dot(w, np.log(theta @ m)))
    return total


def log_likelihood(theta, groups: Sequence[MechanismGroup]) -> float:
    """Normalised log-likelihood sum_A (n^A/n) sum_z q^A_z log(theta A^A)_z."""
    theta = np.asarray(getattr(theta, 'probs', theta), dtype=float)
    if theta.size != _input_size(groups):
        raise DomainError("theta does not match the secret alphabet")
    return _loglik(theta, _terms(groups))


def _em(terms: Sequence[Term], k: int, cfg: EstimatorConfig) -> EstimationResult:
    theta = cfg.initial(k)
    for m, _ in terms:
        if np.any(theta @ m <= 0):
            raise EstimationError("an observed symbol has probability zero under every secret")
    loglik = _loglik(theta, terms)
    history = [(theta.copy(), loglik)] if cfg.record_history else []

    converged = False
    t = 0
    while t < cfg.max_iters:
        acc = np.zeros(k)
        for m, w in terms:
            acc += m @ (w / (theta @ m))
        new = theta * acc
        new[new < UNDERFLOW] = 0.0
        new /= new.sum()
        t += 1
        new_loglik = _loglik(new, terms)
        if cfg.record_history:
            history.append((new.copy(), new_loglik))
        done = abs(new_loglik - loglik) < cfg.delta
        theta, loglik = new, new_loglik
        if done:
            converged = True
            break

    if not converged:
        logger.warning(f"EM stopped after max_iters={cfg.max_iters} without reaching delta={cfg.delta}")
    # the last update only confirmed convergence
    iterations = t - 1 if converged else t
    return EstimationResult(
        Distribution(theta),
        iterations,
        loglik,
        theta.copy(),
        converged,
        tuple(history),
    )


def _dense_square(channel: Channel) -> MatrixChannel:
    if not isinstance(channel, MatrixChannel) or not channel.is_square:
        raise EstimatorMismatchError("matrix inversion needs a dense square channel")
    return channel


def _solve_left(channel: MatrixChannel, q: np.ndarray) -> np.ndarray:
    """theta with theta @ A = q."""
    return lu_solve(lu_checked(channel.matrix), q, trans=1, check_finite=False)


def inv(group: MechanismGroup) -> np.ndarray:
    channel = _dense_square(group.channel)
    return _solve_left(channel, group.observed.dense(channel.output_size))


def _pooled(groups: Sequence[MechanismGroup]) -> MechanismGroup:
    _input_size(groups)
    for g in groups:
        if not isinstance(g.channel, MatrixChannel):
            raise EstimatorMismatchError("compound-mechanism estimators need dense channels")
    channel = average_channel(groups)
    q = pooled_empirical([g.observed for g in groups])
    return MechanismGroup(channel, q.total_count, q)


def cm_inv(groups: Sequence[MechanismGroup]) -> np.ndarray:
    """q[n] A[n]^-1 for the pooled reports and the average channel."""
    pooled = _pooled(groups)
    channel = _dense_square(pooled.channel)
    return _solve_left(channel, pooled.observed.dense(channel.output_size))


def cm_inv_krr(eps_list: Sequence[float], pooled_q: Empirical, k: int) -> np.ndarray:
    eps_n = krr_avg_eps(eps_list, k)
    q = pooled_q.dense(k)
    if math.isinf(eps_n):
        return q
    e = math.expm1(eps_n)
    return (1.0 + k / e) * q - 1.0 / e


def ibu(group: MechanismGroup, cfg: EstimatorConfig = EstimatorConfig()) -> EstimationResult:
    return gibu([group], cfg)


def cm_ibu(groups: Sequence[MechanismGroup], cfg: EstimatorConfig = EstimatorConfig()) -> EstimationResult:
    """IBU on the average channel and pooled reports; A[n] need not be invertible."""
    return ibu(_pooled(groups), cfg)


def _rappor_from_frequencies(s: np.ndarray, eps_n: float) -> np.ndarray:
    if math.isinf(eps_n):
        return s
    e = math.expm1(eps_n / 2.0)
    return (1.0 + 2.0 / e) * s - 1.0 / e


def cm_rappor(
    eps_list: Sequence[float],
    reports: Union[np.ndarray, Sequence[BitVectorReport]],
) -> np.ndarray:
    """CM-RAPPOR from per-user bit vectors: per-bit frequencies debiased with eps[n]."""
    if isinstance(reports, np.ndarray):
        bits = reports
    else:
        if not reports:
            raise EstimationError("no RAPPOR reports")
        lengths = {len(r) for r in reports}
        if len(lengths) != 1:
            raise DomainError("RAPPOR reports differ in length")
        bits = np.vstack([r.bits for r in reports])
    if bits.ndim != 2 or bits.shape[0] == 0:
        raise EstimationError("no RAPPOR reports")
    if len(eps_list) != bits.shape[0]:
        raise DomainError(f"{len(eps_list)} epsilons for {bits.shape[0]} reports")
    return _rappor_from_frequencies(bits.mean(axis=0), rappor_avg_eps(eps_list))


def cm_rappor_grouped(groups: Sequence[MechanismGroup]) -> np.ndarray:
    """CM-RAPPOR over groups whose reports are stored as bit-string empiricals."""
    k = _input_size(groups)
    if not all(isinstance(g.channel, RapporChannel) for g in groups):
        raise EstimatorMismatchError("CM-RAPPOR needs every group to use RAPPOR")
    n = sum(g.count for g in groups)
    s = np.zeros(k)
    for g in groups:
        s += (g.count / n) * (g.observed.weights @ g.channel.decode(g.observed.support))
    eps_n = rappor_avg_eps([g.channel.eps for g in groups], weights=[g.count for g in groups])
    return _rappor_from_frequencies(s, eps_n)


def rappor_estimate(group: MechanismGroup) -> np.ndarray:
    return cm_rappor_grouped([group])


def gibu(groups: Sequence[MechanismGroup], cfg: EstimatorConfig = EstimatorConfig()) -> EstimationResult:
    """Generalised IBU: one EM step per iteration over every group's likelihood columns.

    The cost of an iteration depends on the number of distinct observed
    symbols per group, not on the number of users.
    """
    k = _input_size(groups)
    result = _em(_terms(groups), k, cfg)
    logger.debug(f"GIBU over {len(groups)} groups: {result.iterations} iterations, L={result.final_loglik:.12g}")
    return result


def gibu_naive(
    per_user: Sequence[Tuple[Channel, Hashable]],
    cfg: EstimatorConfig = EstimatorConfig(),
) -> EstimationResult:
    """Per-user form of the GIBU update, one likelihood column per user."""
    if not per_user:
        raise EstimationError("no users given")
    sizes = {ch.input_size for ch, _ in per_user}
    if len(sizes) != 1:
        raise EstimationError("users disagree on the secret alphabet")
    columns = np.hstack([ch.columns([z]) for ch, z in per_user])
    n = len(per_user)
    return _em([(columns, np.full(n, 1.0 / n))], sizes.pop(), cfg)


def combine_results(
    base: BaseEstimator,
    groups: Sequence[MechanismGroup],
    cfg: EstimatorConfig = EstimatorConfig(),
    post: PostProcessing = 'projection',
) -> Distribution:
    """Run ``base`` on every group separately and average with weights n^A/n."""
    _input_size(groups)
    if base == 'inv':
        per_group = [postprocess(post, inv(g)) for g in groups]
    elif base == 'ibu':
        per_group = [ibu(g, cfg).estimate for g in groups]
    elif base == 'rappor':
        if not all(isinstance(g.channel, RapporChannel) for g in groups):
            raise EstimatorMismatchError("the RAPPOR estimator needs every group to use RAPPOR")
        per_group = [postprocess(post, rappor_estimate(g)) for g in groups]
    else:
        raise DomainError(f"unknown base estimator {base!r}")

    n = sum(g.count for g in groups)
    combined = np.zeros(per_group[0].size)
    for g, estimate in zip(groups, per_group):
        combined += (g.count / n) * estimate.probs
    return Distribution(combined / combined.sum())
