"""Distances between distributions and closed-form error bounds for the
compound k-RR and RAPPOR estimators."""
from __future__ import annotations

import logging
import math
from typing import Optional, Union

import numpy as np

from ldp_unifier.alphabet import LinearAlphabet, PlanarGrid, coarsen, coarsen_distribution
from ldp_unifier.distributions import Distribution
from ldp_unifier.errors import DomainError
from ldp_unifier.guardrails import BoundReport
from ldp_unifier.lp import transportation

logger = logging.getLogger('ldp_unifier.metrics')

EXACT_CAP = 200


def _vec(v) -> np.ndarray:
    return np.asarray(getattr(v, 'probs', v), dtype=float)


def _pair(p, q) -> tuple:
    p, q = _vec(p), _vec(q)
    if p.shape != q.shape or p.ndim != 1:
        raise DomainError(f"vectors differ in shape: {p.shape} vs {q.shape}")
    return p, q


def emd_linear(p, q, a: LinearAlphabet) -> float:
    p, q = _pair(p, q)
    if p.size != a.size:
        raise DomainError(f"distributions of length {p.size} on an alphabet of {a.size}")
    return float(a.spacing * np.abs(np.cumsum(p) - np.cumsum(q)).sum())


def emd_planar(p, q, g: PlanarGrid, cap: int = EXACT_CAP) -> float:
    p, q = _pair(p, q)
    if p.size != g.size:
        raise DomainError(f"distributions of length {p.size} on a grid of {g.size} cells")
    if g.size > cap:
        raise DomainError(
            f"exact planar EMD is capped at {cap} cells but the grid has {g.size}; "
            f"coarsen the grid (emd.coarsen) or raise emd.exact_cap"
        )
    _, cost = transportation(p, q, g.distance_matrix(), max_variables=cap * cap)
    return max(cost, 0.0)


def emd(p, q, alphabet: Union[LinearAlphabet, PlanarGrid], cap: int = EXACT_CAP,
        coarsen_factor: Optional[int] = None) -> float:
    if isinstance(alphabet, LinearAlphabet):
        return emd_linear(p, q, alphabet)
    if coarsen_factor and coarsen_factor > 1:
        p = coarsen_distribution(_vec(p), alphabet, coarsen_factor)
        q = coarsen_distribution(_vec(q), alphabet, coarsen_factor)
        alphabet = coarsen(alphabet, coarsen_factor)
    return emd_planar(p, q, alphabet, cap)


def l2_sq_error(est, truth) -> float:
    est, truth = _pair(est, truth)
    return float(np.sum((est - truth) ** 2))


def total_variation(p, q) -> float:
    p, q = _pair(p, q)
    return float(0.5 * np.abs(p - q).sum())


def _check(eps_n: float, n: int) -> None:
    if not eps_n > 0:
        raise DomainError(f"eps[n] must be positive, got {eps_n}")
    if n < 1:
        raise DomainError("n must be >= 1")


def prop2_bound(truth: Distribution, eps_n: float, n: int, k: int) -> BoundReport:
    """Expected squared l2 error of compound k-RR inversion:
    (1 - sum theta^2)/n + (k-1)/n * (k + 2(e^eps - 1)) / (e^eps - 1)^2."""
    _check(eps_n, n)
    theta = _vec(truth)
    em1 = math.expm1(eps_n)
    noise = (k - 1) * (k / em1 ** 2 + 2.0 / em1)
    value = (1.0 - float(np.dot(theta, theta)) + noise) / n
    return BoundReport(bound_value=max(value, 0.0), n=n, eps_n=eps_n)


def prop3_bound(truth: Distribution, eps_n: float, n: int, k: int) -> BoundReport:
    """Expected squared l2 error of compound RAPPOR:
    (1 - sum theta^2)/n + k e^(eps/2) / (n (e^(eps/2) - 1)^2)."""
    _check(eps_n, n)
    theta = _vec(truth)
    # e^(h)/(e^h - 1)^2 rewritten with e^-h so large eps does not overflow
    h = eps_n / 2.0
    noise = k * math.exp(-h) / math.expm1(-h) ** 2
    value = (1.0 - float(np.dot(theta, theta)) + noise) / n
    return BoundReport(bound_value=max(value, 0.0), n=n, eps_n=eps_n)
