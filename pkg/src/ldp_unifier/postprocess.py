"""Turn raw estimates (which may be negative or not sum to one) into distributions."""
from __future__ import annotations

from typing import Literal

import numpy as np

from ldp_unifier.distributions import Distribution
from ldp_unifier.errors import DomainError

PostProcessing = Literal['projection', 'normalization']

_ON_SIMPLEX_TOL = 1e-12


def _as_vector(v) -> np.ndarray:
    v = np.asarray(getattr(v, 'probs', v), dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("expected a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise DomainError("vector has non-finite components")
    return v


def _on_simplex(v: np.ndarray) -> bool:
    return bool(np.all(v >= 0) and abs(v.sum() - 1.0) <= _ON_SIMPLEX_TOL)


def project_simplex(v) -> Distribution:
    """Euclidean projection onto the probability simplex (sort and threshold)."""
    v = _as_vector(v)
    if _on_simplex(v):
        return Distribution(v)
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    ranks = np.arange(1, v.size + 1)
    rho = np.flatnonzero(u - (css - 1.0) / ranks > 0)[-1]
    tau = (css[rho] - 1.0) / (rho + 1)
    w = np.maximum(v - tau, 0.0)
    return Distribution(w / w.sum())


def truncate_normalize(v) -> Distribution:
    v = _as_vector(v)
    if _on_simplex(v):
        return Distribution(v)
    w = np.maximum(v, 0.0)
    total = w.sum()
    if total <= 0:
        raise DomainError("cannot normalise a vector with no positive component")
    return Distribution(w / total)


def postprocess(method: PostProcessing, v) -> Distribution:
    if method == 'projection':
        return project_simplex(v)
    if method == 'normalization':
        return truncate_normalize(v)
    raise DomainError(f"unknown post-processing method {method!r}")
