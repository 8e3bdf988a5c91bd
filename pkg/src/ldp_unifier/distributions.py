"""Probability vectors, seeded sampling and empirical distributions."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence, Tuple

import numpy as np
from scipy.stats import binom

from ldp_unifier.errors import DomainError

logger = logging.getLogger('ldp_unifier.distributions')

SUM_TOL = 1e-9
COUNT_TOL = 1e-6


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Distribution:
    """Dense probability vector over an alphabet of ``len(probs)`` elements."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise DomainError(f"distribution must be a non-empty vector, got shape {p.shape}")
        if not np.all(np.isfinite(p)):
            raise DomainError("distribution has non-finite components")
        if np.any(p < 0):
            raise DomainError(f"distribution has negative component {p.min()}")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise DomainError(f"distribution sums to {p.sum()!r}, expected 1")
        object.__setattr__(self, 'probs', _frozen(p))

    @classmethod
    def uniform(cls, k: int) -> 'Distribution':
        if k < 1:
            raise DomainError("alphabet size must be >= 1")
        return cls(np.full(k, 1.0 / k))

    @classmethod
    def point_mass(cls, k: int, x: int) -> 'Distribution':
        p = np.zeros(k)
        p[x] = 1.0
        return cls(p)

    @property
    def size(self) -> int:
        return self.probs.size

    def __len__(self) -> int:
        return self.probs.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True, eq=False)
class Empirical:
    """Relative frequencies of observed symbols, stored over the observed support only.

    Symbols are kept in sorted order so that every sum over the support runs in
    the same order.
    """

    support: Tuple[Hashable, ...]
    weights: np.ndarray
    total_count: int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if self.total_count < 1:
            raise DomainError("empirical distribution needs a positive total count")
        if w.shape != (len(self.support),):
            raise DomainError("support and weights differ in length")
        if len(set(self.support)) != len(self.support):
            raise DomainError("support entries must be distinct")
        if np.any(w <= 0):
            raise DomainError("empirical weights must be positive")
        if abs(w.sum() - 1.0) > SUM_TOL:
            raise DomainError(f"empirical weights sum to {w.sum()!r}")
        scaled = w * self.total_count
        if np.any(np.abs(scaled - np.round(scaled)) > COUNT_TOL):
            raise DomainError("weights times total_count must be integers")
        object.__setattr__(self, 'support', tuple(self.support))
        object.__setattr__(self, 'weights', _frozen(w))

    @classmethod
    def from_counts(cls, counts: Mapping[Hashable, int]) -> 'Empirical':
        items = sorted((s, c) for s, c in counts.items() if c > 0)
        if not items:
            raise DomainError("no positive counts")
        total = sum(c for _, c in items)
        symbols = tuple(s for s, _ in items)
        return cls(symbols, np.array([c for _, c in items], dtype=float) / total, total)

    @property
    def counts(self) -> np.ndarray:
        return np.rint(self.weights * self.total_count).astype(np.int64)

    def dense(self, size: int) -> np.ndarray:
        """Weights as a dense vector over integer symbols ``0..size-1``."""
        out = np.zeros(size)
        idx = np.asarray(self.support, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= size):
            raise DomainError(f"support exceeds output alphabet of size {size}")
        out[idx] = self.weights
        return out

    def __len__(self) -> int:
        return len(self.support)


@dataclass(frozen=True, eq=False)
class SampleSet:
    values: np.ndarray
    seed: int
    dropped: int = field(default=0, compare=False)
    # repeat check-ins of a user removed before binning, not counted in dropped
    deduplicated: int = field(default=0, compare=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        v.setflags(write=False)
        object.__setattr__(self, 'values', v)

    def __len__(self) -> int:
        return self.values.size

    def check_alphabet(self, size: int) -> None:
        if self.values.size and (self.values.min() < 0 or self.values.max() >= size):
            raise DomainError(f"sample values exceed alphabet of size {size}")


def split_seed(root: int, *path: int) -> np.random.Generator:
    """PCG64 generator for the child stream ``path`` of ``root``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(root, spawn_key=tuple(path))))


def binomial_distribution(k: int, alpha: float) -> Distribution:
    """Binomial(k-1, alpha) on {0, ..., k-1}."""
    if k < 1:
        raise DomainError("alphabet size must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    p = binom.pmf(np.arange(k), k - 1, alpha)
    return Distribution(p / p.sum())


def sample_iid(d: Distribution, n: int, seed: int) -> SampleSet:
    if n < 0:
        raise DomainError("sample size must be >= 0")
    rng = np.random.default_rng(seed)
    return SampleSet(draw(d, n, rng), seed)


def draw(d: Distribution, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` i.i.d. indices from ``d`` using an existing generator."""
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    cdf = np.cumsum(d.probs)
    u = rng.random(n) * cdf[-1]
    return np.minimum(np.searchsorted(cdf, u, side='right'), d.size - 1).astype(np.int64)


def empirical(observations: Iterable[Hashable] | np.ndarray) -> Empirical:
    obs = observations if isinstance(observations, np.ndarray) else np.asarray(list(observations))
    if obs.size == 0:
        raise DomainError("cannot build an empirical distribution from no observations")
    symbols, counts = np.unique(obs, return_counts=True)
    total = int(counts.sum())
    return Empirical(tuple(symbols.tolist()), counts / total, total)


def pooled_empirical(empiricals: Sequence[Empirical]) -> Empirical:
    """Merge empiricals by adding their raw counts."""
    merged: dict = {}
    for e in empiricals:
        for s, c in zip(e.support, e.counts.tolist()):
            merged[s] = merged.get(s, 0) + c
    return Empirical.from_counts(merged)
