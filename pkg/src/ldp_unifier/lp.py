"""Dense two-phase simplex with Bland's rule, and optimal transport on top of it.

Programs here are small (Shokri's mechanism on at most a few dozen secrets,
transport between at most a couple of hundred cells), so a full tableau is
kept in memory and every pivot touches it directly.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from ldp_unifier.errors import DomainError, LinearProgramError

logger = logging.getLogger('ldp_unifier.lp')

PIVOT_TOL = 1e-9
SOLUTION_TOL = 1e-7
MAX_PIVOTS = 1_000_000
TRANSPORT_MAX_VARIABLES = 40_000


class Sense(str, enum.Enum):
    MAX = 'max'
    MIN = 'min'


class Relation(str, enum.Enum):
    LE = '<='
    EQ = '='
    GE = '>='


class LpStatus(str, enum.Enum):
    OPTIMAL = 'optimal'
    INFEASIBLE = 'infeasible'
    UNBOUNDED = 'unbounded'
    ITERATION_LIMIT = 'iteration_limit'


Constraint = Tuple[Sequence[float], Union[Relation, str], float]
Block = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """optimise ``objective @ x`` subject to ``a[i] @ x  relations[i]  rhs[i]`` and ``x >= lower``."""

    objective: np.ndarray
    sense: Sense
    a: np.ndarray
    relations: Tuple[Relation, ...]
    rhs: np.ndarray
    lower: Optional[np.ndarray] = None

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise DomainError("objective must be a non-empty vector")
        a = np.asarray(self.a, dtype=float).reshape(-1, c.size)
        rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        if rhs.size != a.shape[0] or len(self.relations) != a.shape[0]:
            raise DomainError("every constraint needs a relation and a right-hand side")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(rhs)) and np.all(np.isfinite(c))):
            raise DomainError("coefficients and right-hand sides must be finite")
        lower = np.zeros(c.size) if self.lower is None else np.asarray(self.lower, dtype=float)
        if lower.shape != c.shape:
            raise DomainError("one lower bound per variable")
        object.__setattr__(self, 'objective', c)
        object.__setattr__(self, 'sense', Sense(self.sense))
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'relations', tuple(Relation(r) for r in self.relations))
        object.__setattr__(self, 'rhs', rhs)
        object.__setattr__(self, 'lower', lower)

    @property
    def num_vars(self) -> int:
        return self.objective.size

    @property
    def constraints(self) -> List[Tuple[np.ndarray, Relation, float]]:
        return [(self.a[i], self.relations[i], float(self.rhs[i])) for i in range(self.rhs.size)]

    @classmethod
    def from_constraints(
        cls,
        objective: Sequence[float],
        sense: Union[Sense, str],
        constraints: Iterable[Constraint],
        lower: Optional[Sequence[float]] = None,
    ) -> 'LinearProgram':
        c = np.asarray(objective, dtype=float)
        rows, relations, rhs = [], [], []
        for coeffs, relation, b in constraints:
            coeffs = np.asarray(coeffs, dtype=float)
            if coeffs.shape != c.shape:
                raise DomainError(f"constraint has {coeffs.size} coefficients, expected {c.size}")
            rows.append(coeffs)
            relations.append(Relation(relation))
            rhs.append(float(b))
        a = np.vstack(rows) if rows else np.zeros((0, c.size))
        return cls(c, Sense(sense), a, tuple(relations), np.asarray(rhs), lower)

    @classmethod
    def from_blocks(
        cls,
        objective: np.ndarray,
        sense: Union[Sense, str],
        upper: Optional[Block] = None,
        equal: Optional[Block] = None,
        at_least: Optional[Block] = None,
        lower: Optional[np.ndarray] = None,
    ) -> 'LinearProgram':
        c = np.asarray(objective, dtype=float)
        mats, relations, rhs = [], [], []
        for block, relation in ((upper, Relation.LE), (equal, Relation.EQ), (at_least, Relation.GE)):
            if block is None:
                continue
            m, b = np.asarray(block[0], dtype=float), np.asarray(block[1], dtype=float)
            if m.ndim != 2 or m.shape[1] != c.size or b.shape != (m.shape[0],):
                raise DomainError(f"{relation.value} block has shape {m.shape} for {c.size} variables")
            mats.append(m)
            relations.extend([relation] * m.shape[0])
            rhs.append(b)
        a = np.vstack(mats) if mats else np.zeros((0, c.size))
        return cls(c, Sense(sense), a, tuple(relations), np.concatenate(rhs) if rhs else np.zeros(0), lower)


@dataclass(frozen=True, eq=False)
class LpSolution:
    status: LpStatus
    values: np.ndarray
    objective_value: float

    @property
    def is_optimal(self) -> bool:
        return self.status is LpStatus.OPTIMAL


class _Tableau:
    """Constraint rows on top, reduced-cost row last, right-hand side in the last column."""

    def __init__(self, t: np.ndarray, basis: List[int], max_pivots: int):
        self.t = t
        self.basis = basis
        self.pivots = 0
        self.max_pivots = max_pivots

    def pivot(self, i: int, j: int) -> None:
        t = self.t
        t[i] /= t[i, j]
        col = t[:, j].copy()
        col[i] = 0.0
        rows = np.flatnonzero(col)
        if rows.size:
            t[rows] -= col[rows, None] * t[i]
        self.basis[i] = j
        self.pivots += 1

    def run(self, n_cols: int) -> LpStatus:
        """Minimise the reduced-cost row over the first ``n_cols`` columns."""
        t = self.t
        while True:
            negative = np.flatnonzero(t[-1, :n_cols] < -PIVOT_TOL)
            if negative.size == 0:
                return LpStatus.OPTIMAL
            if self.pivots >= self.max_pivots:
                return LpStatus.ITERATION_LIMIT
            j = int(negative[0])
            column = t[:-1, j]
            eligible = np.flatnonzero(column > PIVOT_TOL)
            if eligible.size == 0:
                return LpStatus.UNBOUNDED
            ratios = np.maximum(t[eligible, -1], 0.0) / column[eligible]
            best = ratios.min()
            tied = eligible[ratios <= best + PIVOT_TOL * (1.0 + best)]
            i = int(min(tied, key=lambda r: self.basis[r]))
            self.pivot(i, j)


def _failed(status: LpStatus, n: int) -> LpSolution:
    return LpSolution(status, np.full(n, np.nan), float('nan'))


def solve(p: LinearProgram, max_pivots: int = MAX_PIVOTS) -> LpSolution:
    """Two-phase simplex; the first candidate column and the lowest-index
    leaving variable win every tie, so results are deterministic."""
    n, m = p.num_vars, p.rhs.size
    cost = p.objective if p.sense is Sense.MIN else -p.objective

    # shift x = x' + lower so that x' >= 0
    a = p.a.copy()
    b = p.rhs - a @ p.lower
    relations = list(p.relations)
    for i in range(m):
        if b[i] < 0:
            a[i], b[i] = -a[i], -b[i]
            if relations[i] is Relation.LE:
                relations[i] = Relation.GE
            elif relations[i] is Relation.GE:
                relations[i] = Relation.LE

    n_slack = sum(r is not Relation.EQ for r in relations)
    n_art = sum(r is not Relation.LE for r in relations)
    width = n + n_slack + n_art
    t = np.zeros((m + 1, width + 1))
    t[:m, :n] = a
    t[:m, -1] = b
    basis: List[int] = [0] * m
    slack, art = n, n + n_slack
    for i, relation in enumerate(relations):
        if relation is Relation.LE:
            t[i, slack] = 1.0
            basis[i] = slack
            slack += 1
            continue
        if relation is Relation.GE:
            t[i, slack] = -1.0
            slack += 1
        t[i, art] = 1.0
        basis[i] = art
        art += 1

    tableau = _Tableau(t, basis, max_pivots)
    first_art = n + n_slack
    if n_art:
        art_rows = [i for i in range(m) if basis[i] >= first_art]
        t[-1] = -t[art_rows].sum(axis=0)
        t[-1, first_art:width] = 0.0
        status = tableau.run(width)
        if status is not LpStatus.OPTIMAL:
            return _failed(status, n)
        scale = max(1.0, float(np.abs(b).max()) if m else 1.0)
        if -t[-1, -1] > PIVOT_TOL * scale:
            logger.debug(f"phase one ended with infeasibility {-t[-1, -1]:.3g}")
            return _failed(LpStatus.INFEASIBLE, n)
        t = _drive_out_artificials(tableau, first_art)
        t = np.delete(t, np.s_[first_art:width], axis=1)
        tableau.t = t

    width = n + n_slack
    c_full = np.zeros(width)
    c_full[:n] = cost
    t[-1, :] = 0.0
    t[-1, :width] = c_full
    for i, j in enumerate(tableau.basis):
        if c_full[j] != 0.0:
            t[-1] -= c_full[j] * t[i]
    status = tableau.run(width)
    if status is not LpStatus.OPTIMAL:
        return _failed(status, n)

    shifted = np.zeros(width)
    for i, j in enumerate(tableau.basis):
        shifted[j] = max(t[i, -1], 0.0)
    values = shifted[:n] + p.lower
    solution = LpSolution(LpStatus.OPTIMAL, values, float(p.objective @ values))
    logger.debug(f"simplex: {n} vars, {m} constraints, {tableau.pivots} pivots")
    _check_feasible(p, values)
    return solution


def _drive_out_artificials(tableau: _Tableau, first_art: int) -> np.ndarray:
    """Pivot zero-valued artificials out of the basis; drop rows that are redundant."""
    t = tableau.t
    redundant = []
    for i, j in enumerate(tableau.basis):
        if j < first_art:
            continue
        candidates = np.flatnonzero(np.abs(t[i, :first_art]) > PIVOT_TOL)
        if candidates.size:
            tableau.pivot(i, int(candidates[0]))
        else:
            redundant.append(i)
    if redundant:
        t = np.delete(t, redundant, axis=0)
        tableau.basis = [j for i, j in enumerate(tableau.basis) if i not in set(redundant)]
        tableau.t = t
    return tableau.t


def _check_feasible(p: LinearProgram, x: np.ndarray) -> None:
    if p.rhs.size == 0:
        return
    lhs = p.a @ x
    scale = 1.0 + np.abs(p.rhs)
    worst = 0.0
    for relation, value, b, s in zip(p.relations, lhs, p.rhs, scale):
        if relation is Relation.LE:
            gap = value - b
        elif relation is Relation.GE:
            gap = b - value
        else:
            gap = abs(value - b)
        worst = max(worst, gap / s)
    if worst > SOLUTION_TOL:
        logger.warning(f"simplex solution violates a constraint by {worst:.3g}")


def transportation(
    supply: Union[np.ndarray, Sequence[float]],
    demand: Union[np.ndarray, Sequence[float]],
    cost: np.ndarray,
    max_variables: int = TRANSPORT_MAX_VARIABLES,
) -> Tuple[np.ndarray, float]:
    """Minimum-cost plan moving ``supply`` onto ``demand``.

    Rows and columns without mass are dropped before the program is built;
    ``max_variables`` caps the remaining plan size.
    """
    s = np.asarray(getattr(supply, 'probs', supply), dtype=float)
    d = np.asarray(getattr(demand, 'probs', demand), dtype=float)
    cost = np.asarray(cost, dtype=float)
    if cost.shape != (s.size, d.size):
        raise DomainError(f"cost matrix {cost.shape} does not match supply {s.size} x demand {d.size}")
    if np.any(cost < 0) or np.any(s < 0) or np.any(d < 0):
        raise DomainError("masses and costs must be non-negative")
    if s.sum() <= 0 or d.sum() <= 0:
        raise DomainError("supply and demand need positive mass")

    rows, cols = np.flatnonzero(s > 0), np.flatnonzero(d > 0)
    rs, cs = rows.size, cols.size
    if rs * cs > max_variables:
        raise DomainError(f"transport plan with {rs * cs} variables exceeds the cap of {max_variables}")
    s_red = s[rows] / s.sum()
    d_red = d[cols] / d.sum()

    row_sums = np.kron(np.eye(rs), np.ones(cs))
    col_sums = np.tile(np.eye(cs), rs)
    program = LinearProgram.from_blocks(
        cost[np.ix_(rows, cols)].ravel(),
        Sense.MIN,
        equal=(np.vstack([row_sums, col_sums]), np.r_[s_red, d_red]),
    )
    solution = solve(program)
    if not solution.is_optimal:
        raise LinearProgramError(f"transport program ended with {solution.status.value}", solution.status.value)

    plan = np.zeros((s.size, d.size))
    plan[np.ix_(rows, cols)] = solution.values.reshape(rs, cs)
    return plan, float((plan * cost).sum())
