"""Dense two-phase simplex and the row problems built on top of it.

The solver is deliberately small: problems here have a handful of
variables and a few dozen constraints.  Vertex identity matters (normal
cones are attached to vertices), so interior-point codes are not an
option and the pivot rule is Bland's rule with lexicographic tie-breaks,
which makes the returned vertex a deterministic function of the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np

from .errors import InfeasibleModel, LpError, NotInCone, UnboundedModel

if TYPE_CHECKING:
    from .model import ImpreciseQMatrix

TOL_FEAS = 1e-9
TOL_ACTIVE = 1e-7
_PIVOT_TOL = 1e-11
_COST_TOL = 1e-11


class _Infeasible(Exception):
    pass


class _Unbounded(Exception):
    pass


def _pivot(tab, row, col):
    tab[row] /= tab[row, col]
    factors = tab[:, col].copy()
    factors[row] = 0.0
    tab -= np.outer(factors, tab[row])


def _run(tab, basis, allowed):
    """Iterate Bland's rule on ``tab`` until optimal; columns in
    ``allowed`` (boolean mask) may enter the basis."""
    n_rows = tab.shape[0] - 1
    max_iter = 50 * (tab.shape[1] + n_rows) + 100
    for _ in range(max_iter):
        costs = tab[-1, :-1]
        scale = 1.0 + np.abs(costs).max(initial=0.0)
        candidates = np.flatnonzero(allowed & (costs < -_COST_TOL * scale))
        if candidates.size == 0:
            return
        col = candidates[0]
        column = tab[:n_rows, col]
        positive = np.flatnonzero(column > _PIVOT_TOL)
        if positive.size == 0:
            raise _Unbounded
        ratios = tab[positive, -1] / column[positive]
        best = ratios.min()
        ties = positive[ratios <= best + 1e-12 * (1.0 + abs(best))]
        row = min(ties, key=lambda i: basis[i])
        _pivot(tab, row, col)
        basis[row] = col
    raise LpError("simplex iteration limit reached")


def simplex(c, A, b, *, tol_feas=TOL_FEAS, tie_break=(), info=None):
    """Minimize ``c @ x`` subject to ``A @ x = b`` and ``x >= 0``.

    Returns ``(x, basis)`` where ``x`` is a basic feasible solution and
    ``basis`` lists the basic column indices.  Raises ``_Infeasible`` or
    ``_Unbounded`` (private; callers translate them into domain errors).

    ``tie_break`` holds further objectives optimized lexicographically
    over the optimal face of the previous ones.  If ``info`` is a dict it
    receives ``unique``: whether the optimal vertex was unique before the
    tie-breaking objectives were applied.
    """
    A = np.array(A, dtype=float, ndmin=2)
    b = np.array(b, dtype=float).ravel()
    c = np.asarray(c, dtype=float).ravel()
    n_rows, n = A.shape
    flip = b < 0
    A[flip] *= -1.0
    b[flip] *= -1.0

    # phase 1: [A | I | b], minimizing the sum of artificials
    tab = np.zeros((n_rows + 1, n + n_rows + 1))
    tab[:n_rows, :n] = A
    tab[:n_rows, n:n + n_rows] = np.eye(n_rows)
    tab[:n_rows, -1] = b
    tab[-1, :n] = -A.sum(axis=0)
    tab[-1, -1] = -b.sum()
    basis = list(range(n, n + n_rows))
    allowed = np.ones(n + n_rows, dtype=bool)
    _run(tab, basis, allowed)
    if -tab[-1, -1] > tol_feas * (1.0 + np.abs(b).max(initial=0.0)):
        raise _Infeasible

    # drive degenerate artificials out; drop rows that are redundant
    keep = []
    for i in range(n_rows):
        if basis[i] >= n:
            row = tab[i, :n]
            nz = np.flatnonzero(np.abs(row) > 1e-9)
            if nz.size == 0:
                continue
            _pivot(tab, i, nz[0])
            basis[i] = nz[0]
        keep.append(i)
    tab = np.vstack([tab[keep], tab[-1:]])
    basis = [basis[i] for i in keep]
    tab = np.delete(tab, np.s_[n:n + n_rows], axis=1)

    # phase 2, then the tie-breaking objectives on the optimal face
    allowed = np.ones(n, dtype=bool)
    for level, obj in enumerate([c, *tie_break]):
        obj = np.asarray(obj, dtype=float).ravel()
        tab[-1, :] = 0.0
        tab[-1, :n] = obj
        for i, j in enumerate(basis):
            if obj[j] != 0.0:
                tab[-1] -= obj[j] * tab[i]
        _run(tab, basis, allowed)
        costs = tab[-1, :n]
        tight = np.abs(costs) <= 1e-9 * (1.0 + np.abs(obj).max(initial=0.0))
        nonbasic = np.ones(n, dtype=bool)
        nonbasic[basis] = False
        if level == 0 and info is not None:
            info["unique"] = not np.any(tight & nonbasic)
        allowed &= tight | ~nonbasic

    x = np.zeros(n)
    x[basis] = tab[:-1, -1]
    np.maximum(x, 0.0, out=x)
    return x, basis


@dataclass(frozen=True)
class RowLpProblem:
    """One row of the imprecise Q-matrix as an LP:
    minimize ``objective @ q`` subject to ``constraint_matrix @ q >= rhs``
    and ``q.sum() == 0``.

    ``gamble_index[i]`` is the row of the model's gamble matrix that
    produced constraint ``i``.
    """

    row: int
    constraint_matrix: np.ndarray
    rhs: np.ndarray
    objective: np.ndarray
    gamble_index: np.ndarray

    def solve(self, tie_break=(), info=None):
        A = self.constraint_matrix
        n_con, m = A.shape
        # q = u - v with u, v >= 0; slack s >= 0 turns A q >= rhs into equalities
        A_std = np.zeros((n_con + 1, 2 * m + n_con))
        A_std[:n_con, :m] = A
        A_std[:n_con, m:2 * m] = -A
        A_std[:n_con, 2 * m:] = -np.eye(n_con)
        A_std[n_con, :m] = 1.0
        A_std[n_con, m:2 * m] = -1.0
        b_std = np.append(self.rhs, 0.0)
        c_std = np.concatenate([self.objective, -self.objective, np.zeros(n_con)])
        extra = [np.concatenate([d, -d, np.zeros(n_con)])
                 for d in (np.asarray(t, dtype=float) for t in tie_break)]
        try:
            x, _ = simplex(c_std, A_std, b_std, tie_break=extra, info=info)
        except _Infeasible:
            raise InfeasibleModel(f"row {self.row}: constraint set is empty", row=self.row) from None
        except _Unbounded:
            raise UnboundedModel(f"row {self.row}: constraint set is unbounded", row=self.row) from None
        return x[:m] - x[m:2 * m]


def row_problem(problem: "ImpreciseQMatrix", k: int, h) -> RowLpProblem:
    A, b, idx = problem.row_constraints(k)
    return RowLpProblem(row=k, constraint_matrix=A, rhs=b,
                        objective=np.asarray(h, dtype=float), gamble_index=idx)


@dataclass(frozen=True)
class LpSolution:
    row: int
    vertex: np.ndarray
    value: float
    active_set: tuple
    unique: bool = True


def active_constraints(A, b, q, tol_active=TOL_ACTIVE):
    residual = A @ q - b
    return np.flatnonzero(np.abs(residual) <= tol_active * (1.0 + np.abs(b)))


def minimize_row(problem: "ImpreciseQMatrix", k: int, h, tie_break=()) -> LpSolution:
    """Vertex minimizer of ``q @ h`` over the k-th row polytope.

    Among several minimizers the one lexicographically minimizing the
    ``tie_break`` gambles is returned.
    """
    lp = row_problem(problem, k, h)
    info = {}
    q = lp.solve(tie_break, info)
    active = active_constraints(lp.constraint_matrix, lp.rhs, q)
    return LpSolution(row=k, vertex=q, value=float(q @ lp.objective),
                      active_set=tuple(int(i) for i in lp.gamble_index[active]),
                      unique=info.get("unique", True))


def lower_operator_apply(problem: "ImpreciseQMatrix", h, tie_break=()):
    """Return ``(Q, Q @ h)`` with ``Q`` a minimizing element of the set.

    Rows are optimized independently, which is legitimate because the
    model has separately specified rows.
    """
    sols = [minimize_row(problem, k, h, tie_break) for k in range(problem.m)]
    Q = np.vstack([s.vertex for s in sols])
    return Q, Q @ np.asarray(h, dtype=float)


def lower_operator(problem, h):
    return lower_operator_apply(problem, h)[1]


def upper_operator(problem, h):
    return -lower_operator(problem, -np.asarray(h, dtype=float))


def nonneg_combination(candidates, h, *, tol_feas: Optional[float] = None):
    """Write ``h`` as ``sum(alpha[i] * candidates[i]) + alpha0 * 1``.

    ``alpha >= 0`` while ``alpha0`` is signed.  This is the auxiliary
    problem of the two-phase method with objective ``sum(alpha)``, so the
    result is a basic solution and its support is linearly independent.
    Raises :class:`NotInCone` when no such combination exists.
    """
    h = np.asarray(h, dtype=float)
    F = np.asarray(candidates, dtype=float).reshape(-1, h.size)
    m = h.size
    ones = np.ones((m, 1))
    A = np.hstack([F.T, ones, -ones])
    if tol_feas is None:
        tol_feas = TOL_FEAS
    try:
        x, _ = simplex(np.ones(A.shape[1]), A, h, tol_feas=tol_feas)
    except _Infeasible:
        raise NotInCone("gamble is not in the positive hull of the candidates") from None
    k = F.shape[0]
    alpha = x[:k]
    alpha0 = x[k] - x[k + 1]
    residual = F.T @ alpha + alpha0 - h
    if np.abs(residual).max(initial=0.0) > 1e-7 * (1.0 + np.abs(h).max()):
        raise NotInCone(f"reconstruction residual {np.abs(residual).max():.3g}")
    return alpha, float(alpha0)
