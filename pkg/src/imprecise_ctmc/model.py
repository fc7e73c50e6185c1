"""Gambles, Q-matrices, polyhedral imprecise Q-matrices and their norms."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import lp
from .errors import ModelError

log = logging.getLogger(__name__)

TOL_ROW = 1e-9


def as_gamble(values, m=None):
    f = np.asarray(values, dtype=float)
    if f.ndim != 1 or f.size == 0:
        raise ValueError("a gamble is a non-empty real vector")
    if m is not None and f.size != m:
        raise ValueError(f"gamble has {f.size} entries, expected {m}")
    if not np.all(np.isfinite(f)):
        raise ValueError("gamble entries must be finite")
    return f


def indicator(m, k):
    e = np.zeros(m)
    e[k] = 1.0
    return e


def is_q_matrix(Q, tol=TOL_ROW):
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        return False
    off = Q - np.diag(np.diag(Q))
    return bool(np.all(np.abs(Q.sum(axis=1)) <= tol) and np.all(off >= -tol))


def check_q_matrix(Q, tol=TOL_ROW):
    Q = np.asarray(Q, dtype=float)
    if not is_q_matrix(Q, tol):
        raise ModelError("not a transition rate matrix (row sums zero, off-diagonal >= 0)")
    return Q


# --- norms -------------------------------------------------------------

def max_norm(f):
    return float(np.abs(np.asarray(f, dtype=float)).max(initial=0.0))


def operator_norm(Q):
    """Norm induced by the maximum norm: largest absolute row sum."""
    Q = np.asarray(Q, dtype=float)
    return float(np.abs(Q).sum(axis=1).max(initial=0.0))


def variational_seminorm(f):
    f = np.asarray(f, dtype=float)
    return float(f.max() - f.min())


def center_seminorm(f):
    return 0.5 * variational_seminorm(f)


# --- imprecise Q-matrix ------------------------------------------------

def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ImpreciseQMatrix:
    """Polyhedral set of Q-matrices with separately specified rows.

    Row ``k`` is the polytope ``{q : q.sum() == 0, q @ F[i] >= L[i, k]}``.
    An entry ``L[i, k] == -inf`` means gamble ``i`` does not constrain row
    ``k``.  Indicator gambles are always present among the rows of ``F``
    (added on construction if missing) and carry a bound ``>= 0`` for all
    off-diagonal rows; the constant gamble is never stored.
    """

    gambles: np.ndarray
    lower_bounds: np.ndarray
    name: str = ""
    description: str = ""
    augmented: tuple = field(default=(), compare=False)
    interval_form: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        F = np.array(self.gambles, dtype=float, ndmin=2)
        L = np.array(self.lower_bounds, dtype=float, ndmin=2)
        if F.shape != L.shape:
            raise ModelError(f"gambles {F.shape} and lower_bounds {L.shape} differ in shape")
        if not np.all(np.isfinite(F)):
            raise ModelError("gamble entries must be finite")
        if np.any(np.isnan(L)) or np.any(L == np.inf):
            raise ModelError("lower bounds must be finite or -inf")
        F, L, added = _with_indicators(F, L)
        if np.any(np.all(np.abs(F - F.mean(axis=1, keepdims=True)) == 0.0, axis=1)):
            raise ModelError("constant gambles are handled by the row-sum equality; remove them")
        object.__setattr__(self, "gambles", _readonly(F))
        object.__setattr__(self, "lower_bounds", _readonly(L))
        object.__setattr__(self, "augmented", tuple(added))
        if added:
            log.info("added indicator gambles for states %s", list(added))

    @classmethod
    def from_gambles(cls, gambles, lower_bounds, **meta):
        return cls(gambles, lower_bounds, **meta)

    @classmethod
    def from_intervals(cls, q_lower, q_upper, **meta):
        """Interval model ``q_lower <= Q <= q_upper`` entrywise.

        Each entry becomes two gamble constraints, ``q @ 1_l >= Q_L[k, l]``
        and ``q @ (-1_l) >= -Q_U[k, l]``.
        """
        QL = np.asarray(q_lower, dtype=float)
        QU = np.asarray(q_upper, dtype=float)
        if QL.shape != QU.shape or QL.ndim != 2 or QL.shape[0] != QL.shape[1]:
            raise ModelError("q_lower and q_upper must be square matrices of equal shape")
        if np.any(QL > QU):
            raise ModelError("q_lower exceeds q_upper")
        m = QL.shape[0]
        eye = np.eye(m)
        F = np.vstack([eye, -eye])
        L = np.vstack([QL.T, -QU.T])
        return cls(F, L, interval_form=(QL.copy(), QU.copy()), **meta)

    @property
    def m(self):
        return self.gambles.shape[1]

    @property
    def n_gambles(self):
        return self.gambles.shape[0]

    def row_constraints(self, k):
        """``(A, b, idx)``: the finite constraints ``A @ q >= b`` of row k."""
        col = self.lower_bounds[:, k]
        idx = np.flatnonzero(np.isfinite(col))
        return self.gambles[idx], col[idx], idx

    def contains(self, Q, tol=1e-9):
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (self.m, self.m) or np.any(np.abs(Q.sum(axis=1)) > tol):
            return False
        for k in range(self.m):
            A, b, _ = self.row_constraints(k)
            if np.any(A @ Q[k] < b - tol * (1.0 + np.abs(b))):
                return False
        return True

    @cached_property
    def row_ranges(self):
        """``(lo, hi)`` arrays of shape (m, m): extreme values of each entry.

        Computing them doubles as the emptiness/boundedness check.
        """
        m = self.m
        lo = np.empty((m, m))
        hi = np.empty((m, m))
        for k in range(m):
            for l in range(m):
                e = indicator(m, l)
                lo[k, l] = lp.minimize_row(self, k, e).value
                hi[k, l] = 0.0 - lp.minimize_row(self, k, -e).value
        return lo, hi

    def validate(self):
        """Raise InfeasibleModel/UnboundedModel for an invalid row; returns self."""
        self.row_ranges
        return self

    @cached_property
    def qset_norm(self):
        return qset_norm(self)

    @cached_property
    def imprecision_bound(self):
        return imprecision_bound(self)


def _with_indicators(F, L):
    m = F.shape[1]
    added = []
    F_rows = list(F)
    L_rows = list(L)
    for l in range(m):
        e = indicator(m, l)
        hits = np.flatnonzero(np.all(F == e, axis=1))
        if hits.size == 0:
            bounds = np.zeros(m)
            bounds[l] = -np.inf
            F_rows.append(e)
            L_rows.append(bounds)
            added.append(l)
            continue
        for i in hits:
            for k in range(m):
                if k != l and L_rows[i][k] < 0.0:
                    L_rows[i] = L_rows[i].copy()
                    L_rows[i][k] = 0.0
    return np.array(F_rows), np.array(L_rows), added


@dataclass(frozen=True)
class Metrics:
    qset_norm: float
    imprecision_bound: float


def qset_norm(problem: ImpreciseQMatrix) -> float:
    """Largest operator norm over the set: twice the largest leaving rate."""
    lo, _ = problem.row_ranges
    return float(2.0 * np.abs(np.diag(lo)).max(initial=0.0))


def imprecision_bound(problem: ImpreciseQMatrix) -> float:
    """Safe upper bound ``2 * ||Q-set||`` on the diameter of the set."""
    return 2.0 * qset_norm(problem)


def metrics(problem: ImpreciseQMatrix) -> Metrics:
    return Metrics(problem.qset_norm, problem.imprecision_bound)


def singleton(Q, **meta) -> ImpreciseQMatrix:
    """The precise model ``{Q}`` in interval form."""
    Q = check_q_matrix(Q)
    return ImpreciseQMatrix.from_intervals(Q, Q, **meta)
