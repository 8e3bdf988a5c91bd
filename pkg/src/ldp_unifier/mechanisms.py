"""Obfuscation channels: k-RR, truncated geometric (linear and planar),
Basic One-Time RAPPOR and Shokri's optimal mechanism, plus the average
(compound) channel of a set of user groups.

A channel maps a secret ``x`` to an observable ``z`` with probability
``P(z | x)``. Dense channels hold the full row-stochastic matrix; RAPPOR is
implicit because its output alphabet ``{0,1}^k`` cannot be materialised.
"""
from __future__ import annotations

import logging
import math
import warnings
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Hashable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import LinAlgWarning, lu_factor
from scipy.special import expit, logit

from ldp_unifier.alphabet import LinearAlphabet, PlanarGrid
from ldp_unifier.distributions import Distribution, Empirical, empirical
from ldp_unifier.errors import (
    DomainError,
    EstimationError,
    LinearProgramError,
    SingularChannelError,
)
from ldp_unifier.lp import LinearProgram, LpStatus, Sense, solve

logger = logging.getLogger('ldp_unifier.mechanisms')

ROW_TOL = 1e-9
PIVOT_TOL = 1e-12
RING_TOL = 1e-14
SHOKRI_MAX_SIZE = 32


class Channel(ABC):
    """Conditional distribution from secrets ``0..input_size-1`` to observables."""

    family: str = 'custom'
    parameter: Optional[float] = None

    @property
    @abstractmethod
    def input_size(self) -> int: ...

    @property
    @abstractmethod
    def output_size(self) -> int: ...

    @property
    def is_dense(self) -> bool:
        return False

    @abstractmethod
    def columns(self, symbols: Sequence[Hashable]) -> np.ndarray:
        """Matrix of shape (input_size, len(symbols)) holding P(z | x)."""

    @abstractmethod
    def sample(self, secrets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """One observable per secret, drawn independently."""

    def check_symbols(self, symbols: Sequence[Hashable]) -> None:
        """Raise DomainError if any symbol is not an observable of this channel."""
        self.columns(symbols)

    def prob(self, x: int, z: Hashable) -> float:
        if not 0 <= x < self.input_size:
            raise DomainError(f"secret {x} out of range")
        return float(self.columns([z])[x, 0])


@dataclass(frozen=True, eq=False)
class MatrixChannel(Channel):
    matrix: np.ndarray
    family: str = 'custom'
    parameter: Optional[float] = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or 0 in m.shape:
            raise DomainError(f"channel matrix must be 2-D and non-empty, got {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise DomainError("channel entries must be finite and non-negative")
        sums = m.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            raise DomainError(f"channel rows must sum to 1, worst row sums to {sums[np.argmax(np.abs(sums - 1))]!r}")
        m.setflags(write=False)
        object.__setattr__(self, 'matrix', m)
        cdf = np.cumsum(m, axis=1)
        cdf.setflags(write=False)
        object.__setattr__(self, '_cdf', cdf)

    @property
    def input_size(self) -> int:
        return self.matrix.shape[0]

    @property
    def output_size(self) -> int:
        return self.matrix.shape[1]

    @property
    def is_dense(self) -> bool:
        return True

    @property
    def is_square(self) -> bool:
        return self.matrix.shape[0] == self.matrix.shape[1]

    def check_symbols(self, symbols: Sequence[Hashable]) -> np.ndarray:
        try:
            idx = np.asarray(symbols, dtype=np.int64)
        except (TypeError, ValueError) as e:
            raise DomainError(f"dense channel symbols must be integers: {e}")
        if idx.size and (idx.min() < 0 or idx.max() >= self.output_size):
            raise DomainError(f"observable outside 0..{self.output_size - 1}")
        return idx

    def columns(self, symbols: Sequence[Hashable]) -> np.ndarray:
        return self.matrix[:, self.check_symbols(symbols)]

    def sample(self, secrets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        secrets = np.asarray(secrets, dtype=np.int64)
        out = np.empty(secrets.size, dtype=np.int64)
        if secrets.size == 0:
            return out
        u = rng.random(secrets.size)
        order = np.argsort(secrets, kind='stable')
        values, starts = np.unique(secrets[order], return_index=True)
        if values[0] < 0 or values[-1] >= self.input_size:
            raise DomainError("secret outside the channel's input alphabet")
        for x, block in zip(values, np.split(order, starts[1:])):
            cdf = self._cdf[x]
            out[block] = np.searchsorted(cdf, u[block] * cdf[-1], side='right')
        return np.minimum(out, self.output_size - 1)


@dataclass(frozen=True, eq=False)
class RapporChannel(Channel):
    """Basic One-Time RAPPOR over ``k`` secrets.

    Observables are bit-strings of length ``k``; character ``u`` is the bit of
    element ``u`` (element 0 is the most significant bit).
    """

    k: int
    eps: float
    family: str = 'rappor'

    def __post_init__(self):
        if self.k < 1:
            raise DomainError("RAPPOR needs at least one secret")
        if not self.eps > 0:
            raise DomainError(f"epsilon must be positive, got {self.eps}")

    @property
    def parameter(self) -> float:
        return self.eps

    @property
    def keep_prob(self) -> float:
        return float(expit(self.eps / 2.0))

    @property
    def input_size(self) -> int:
        return self.k

    @property
    def output_size(self) -> int:
        return 2 ** self.k

    def encode(self, bits: Sequence[int]) -> str:
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.shape != (self.k,):
            raise DomainError(f"expected {self.k} bits, got shape {bits.shape}")
        return ''.join('1' if b else '0' for b in bits)

    def encode_rows(self, bits: np.ndarray) -> np.ndarray:
        bits = np.ascontiguousarray(bits, dtype=np.uint8)
        if bits.ndim != 2 or bits.shape[1] != self.k:
            raise DomainError(f"expected rows of {self.k} bits")
        raw = (bits + ord('0')).view(f'S{self.k}').reshape(-1)
        return np.char.decode(raw, 'ascii')

    def decode(self, symbols: Sequence[str]) -> np.ndarray:
        symbols = list(symbols)
        if any(not isinstance(s, str) or len(s) != self.k for s in symbols):
            raise DomainError(f"RAPPOR observables must be bit-strings of length {self.k}")
        if not symbols:
            return np.zeros((0, self.k), dtype=np.uint8)
        raw = np.frombuffer(''.join(symbols).encode('ascii'), dtype=np.uint8).reshape(-1, self.k)
        bits = raw - ord('0')
        if np.any(bits > 1):
            raise DomainError("RAPPOR observables may only contain '0' and '1'")
        return bits

    def check_symbols(self, symbols: Sequence[Hashable]) -> None:
        self.decode(symbols)

    def columns(self, symbols: Sequence[Hashable]) -> np.ndarray:
        bits = self.decode(symbols).astype(np.int64)
        ones = bits.sum(axis=1)
        # bits of v that differ from the one-hot encoding of x
        mismatches = ones[None, :] + 1 - 2 * bits.T
        p = self.keep_prob
        return np.power(p, self.k - mismatches) * np.power(1.0 - p, mismatches)

    def sample_bits(self, secrets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        secrets = np.asarray(secrets, dtype=np.int64)
        if secrets.size and (secrets.min() < 0 or secrets.max() >= self.k):
            raise DomainError("secret outside the channel's input alphabet")
        onehot = np.zeros((secrets.size, self.k), dtype=np.uint8)
        onehot[np.arange(secrets.size), secrets] = 1
        flips = rng.random((secrets.size, self.k)) >= self.keep_prob
        return onehot ^ flips.astype(np.uint8)

    def sample(self, secrets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.encode_rows(self.sample_bits(secrets, rng))


@dataclass(frozen=True, eq=False)
class BitVectorReport:
    bits: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bits, dtype=np.uint8)
        if b.ndim != 1 or np.any(b > 1):
            raise DomainError("a bit-vector report holds a 1-D vector of 0/1 values")
        b.setflags(write=False)
        object.__setattr__(self, 'bits', b)

    @classmethod
    def from_symbol(cls, symbol: str) -> 'BitVectorReport':
        return cls(np.array([int(c) for c in symbol], dtype=np.uint8))

    def __len__(self) -> int:
        return self.bits.size


@dataclass(frozen=True, eq=False)
class MechanismGroup:
    """The users sharing one mechanism: channel, head count and their reports."""

    channel: Channel
    count: int
    observed: Empirical

    def __post_init__(self):
        if self.count < 1:
            raise DomainError("a mechanism group needs at least one user")
        if self.observed.total_count != self.count:
            raise DomainError(
                f"group count {self.count} differs from observed total {self.observed.total_count}"
            )
        self.channel.check_symbols(self.observed.support)

    @classmethod
    def from_reports(cls, channel: Channel, reports: Union[np.ndarray, Sequence[Hashable]]) -> 'MechanismGroup':
        observed = empirical(reports)
        return cls(channel, observed.total_count, observed)


# -- constructors -------------------------------------------------------------

def _check_eps(eps: float) -> None:
    if not eps > 0:
        raise DomainError(f"epsilon must be positive, got {eps}")


def krr(k: int, eps: float) -> MatrixChannel:
    """k-ary randomized response: keep x with probability e^eps/(k-1+e^eps)."""
    if k < 2:
        raise DomainError("k-RR needs k >= 2")
    _check_eps(eps)
    t = math.exp(-eps)
    off = t / (1.0 + (k - 1) * t)
    m = np.full((k, k), off)
    np.fill_diagonal(m, 1.0 / (1.0 + (k - 1) * t))
    return MatrixChannel(m, family='krr', parameter=eps)


def geometric_linear(k: int, eps_g: float, spacing: float = 1.0) -> MatrixChannel:
    """Truncated geometric mechanism on a linear range of ``k`` values."""
    if k < 2:
        raise DomainError("the truncated geometric mechanism needs k >= 2")
    _check_eps(eps_g)
    r = math.exp(-eps_g * spacing)
    c = np.full(k, (1.0 - r) / (1.0 + r))
    c[0] = c[-1] = 1.0 / (1.0 + r)
    idx = np.arange(k)
    m = c[None, :] * np.power(r, np.abs(idx[:, None] - idx[None, :]))
    return MatrixChannel(m, family='geom_linear', parameter=eps_g)


def _planar_normalizer(decay: float) -> Tuple[int, float]:
    """Radius and value of sum over Z^2 of exp(-decay * |w|), by square rings."""
    total = 1.0
    r = 0
    while True:
        r += 1
        side = np.arange(-r, r + 1)
        inner = np.arange(-r + 1, r)
        ring = 2.0 * np.exp(-decay * np.hypot(side, r)).sum() + 2.0 * np.exp(-decay * np.hypot(inner, r)).sum()
        total += ring
        if ring < RING_TOL * total:
            return r, total


def geometric_planar(grid: PlanarGrid, eps_g: float) -> MatrixChannel:
    """Planar geometric mechanism truncated to ``grid``.

    Noise is drawn on the infinite lattice of cell centers and every lattice
    point is remapped to its nearest grid cell, which is the coordinate-wise
    clamp into the grid.
    """
    _check_eps(eps_g)
    decay = eps_g * grid.cell_size
    radius, norm = _planar_normalizer(decay)
    offsets = np.arange(-radius, radius + 1)
    kernel = np.exp(-decay * np.hypot(offsets[:, None], offsets[None, :])) / norm

    def collapse(pos: int, n: int) -> np.ndarray:
        c = np.zeros((n, offsets.size))
        c[np.clip(pos + offsets, 0, n - 1), np.arange(offsets.size)] = 1.0
        return c

    row_maps = [collapse(r, grid.rows) for r in range(grid.rows)]
    m = np.empty((grid.size, grid.size))
    for col in range(grid.cols):
        by_col = collapse(col, grid.cols) @ kernel
        for row in range(grid.rows):
            block = by_col @ row_maps[row].T
            m[row * grid.cols + col] = block.T.ravel()
    m /= m.sum(axis=1, keepdims=True)
    logger.info(f"planar geometric eps_g={eps_g} on {grid.cols}x{grid.rows}: lattice radius {radius}")
    return MatrixChannel(m, family='geom_planar', parameter=eps_g)


def rappor(k: int, eps: float) -> RapporChannel:
    return RapporChannel(k, eps)


@dataclass(frozen=True, eq=False)
class ShokriSolution:
    channel: MatrixChannel
    adversary_loss: float
    quality_loss: float


def solve_shokri(
    alphabet: Union[LinearAlphabet, PlanarGrid],
    q_max: float,
    profile: Optional[Distribution] = None,
    loss: Optional[np.ndarray] = None,
    max_size: int = SHOKRI_MAX_SIZE,
) -> ShokriSolution:
    """Channel maximising the adversary's expected loss under a quality budget.

    Linearised form: maximise sum_y t_y subject to
    t_y <= sum_x pi_x A[x, y] loss[x, z] for every (y, z), the quality
    constraint sum_x pi_x sum_z A[x, z] loss[x, z] <= q_max, and stochastic rows.
    """
    k = alphabet.size
    if k > max_size:
        raise DomainError(f"Shokri's LP is limited to {max_size} secrets, got {k}; coarsen the alphabet")
    if q_max < 0:
        raise DomainError("quality budget must be non-negative")
    pi = Distribution.uniform(k).probs if profile is None else profile.probs
    if pi.size != k:
        raise DomainError("profile does not match the alphabet")
    loss = alphabet.distance_matrix() if loss is None else np.asarray(loss, dtype=float)

    n_vars = k * k + k
    # t_y - sum_x pi_x loss[x, z] A[x, y] <= 0, one row per (y, z)
    adversary = np.zeros((k * k, n_vars))
    weighted = pi[:, None] * loss  # [x, z]
    for y in range(k):
        rows = slice(y * k, (y + 1) * k)
        adversary[rows, np.arange(k) * k + y] = -weighted.T
        adversary[rows, k * k + y] = 1.0
    quality = np.zeros((1, n_vars))
    quality[0, :k * k] = weighted.ravel()
    stochastic = np.zeros((k, n_vars))
    for x in range(k):
        stochastic[x, x * k:(x + 1) * k] = 1.0

    objective = np.zeros(n_vars)
    objective[k * k:] = 1.0
    program = LinearProgram.from_blocks(
        objective,
        Sense.MAX,
        upper=(np.vstack([adversary, quality]), np.r_[np.zeros(k * k), q_max]),
        equal=(stochastic, np.ones(k)),
    )
    solution = solve(program)
    if solution.status is not LpStatus.OPTIMAL:
        raise LinearProgramError(f"Shokri LP for q_max={q_max} ended with {solution.status.value}", solution.status.value)

    a = np.clip(solution.values[:k * k].reshape(k, k), 0.0, None)
    a /= a.sum(axis=1, keepdims=True)
    quality_loss = float((weighted * a).sum())
    logger.info(f"Shokri k={k} q_max={q_max}: adversary loss {solution.objective_value:.6g}, quality loss {quality_loss:.6g}")
    return ShokriSolution(
        MatrixChannel(a, family='shokri', parameter=q_max),
        float(solution.objective_value),
        quality_loss,
    )


def shokri(
    alphabet: Union[LinearAlphabet, PlanarGrid],
    profile: Optional[Distribution],
    q_max: float,
    loss: Optional[np.ndarray] = None,
) -> MatrixChannel:
    return solve_shokri(alphabet, q_max, profile=profile, loss=loss).channel


# -- compound mechanisms ------------------------------------------------------

def average_channel(groups: Sequence[MechanismGroup]) -> MatrixChannel:
    """A[n] = sum_A (n^A / n) A."""
    if not groups:
        raise EstimationError("no mechanism groups to average")
    channels = [g.channel for g in groups]
    if not all(isinstance(c, MatrixChannel) for c in channels):
        raise EstimationError("average_channel needs dense channels")
    shape = channels[0].matrix.shape
    if any(c.matrix.shape != shape for c in channels):
        raise EstimationError("channels differ in input or output alphabet")
    if all(np.array_equal(c.matrix, channels[0].matrix) for c in channels):
        return MatrixChannel(channels[0].matrix, family='average')
    n = sum(g.count for g in groups)
    avg = np.zeros(shape)
    for g in groups:
        avg += (g.count / n) * g.channel.matrix
    return MatrixChannel(avg, family='average')


def obfuscate(ch: Channel, x: int, seed: int) -> Hashable:
    rng = np.random.default_rng(seed)
    z = ch.sample(np.array([x]), rng)[0]
    return z.item() if hasattr(z, 'item') else z


def _mean(values: np.ndarray, weights: Optional[Sequence[float]]) -> float:
    if weights is None:
        return float(np.mean(values))
    w = np.asarray(weights, dtype=float)
    if w.shape != values.shape or np.any(w < 0) or w.sum() <= 0:
        raise DomainError("weights must be non-negative, one per epsilon, and not all zero")
    return float(np.dot(w, values) / w.sum())


def krr_avg_eps(eps_list: Sequence[float], k: int, weights: Optional[Sequence[float]] = None) -> float:
    """eps[n] with 1/(k-1+e^eps[n]) equal to the mean of 1/(k-1+e^eps_i).

    ``weights`` (user counts per epsilon) turn the mean into a weighted one.
    """
    eps = np.asarray(eps_list, dtype=float)
    if eps.size == 0:
        raise DomainError("need at least one epsilon")
    t = np.exp(-eps)
    mean = _mean(t / (1.0 + (k - 1) * t), weights)
    if mean == 0.0:
        return math.inf
    return math.log(1.0 / mean - (k - 1))


def rappor_avg_eps(eps_list: Sequence[float], weights: Optional[Sequence[float]] = None) -> float:
    """eps[n] with 1/(1+e^(eps[n]/2)) equal to the mean of 1/(1+e^(eps_i/2))."""
    eps = np.asarray(eps_list, dtype=float)
    if eps.size == 0:
        raise DomainError("need at least one epsilon")
    mean = _mean(expit(-eps / 2.0), weights)
    return float(-2.0 * logit(mean))


def lu_checked(matrix: np.ndarray):
    """LU factors of a square matrix; SingularChannelError on a pivot below 1e-12."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise SingularChannelError(f"channel of shape {m.shape} is not square")
    with warnings.catch_warnings():
        warnings.simplefilter('ignore', LinAlgWarning)
        lu, piv = lu_factor(m, check_finite=False)
    smallest = float(np.min(np.abs(np.diag(lu))))
    if smallest < PIVOT_TOL:
        raise SingularChannelError(f"channel is singular (smallest pivot {smallest:.3g})")
    return lu, piv


def is_invertible(channel: Channel) -> bool:
    if not isinstance(channel, MatrixChannel):
        return False
    try:
        lu_checked(channel.matrix)
    except SingularChannelError:
        return False
    return True
