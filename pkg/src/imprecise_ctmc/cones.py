"""Normal-cone bases at LP vertices.

For a row vertex ``q`` the objective ``h`` lies in the cone positively
spanned by the active gambles (plus both signs of the constant).  We pick
a linearly independent generating subset, complete it to a basis of R^m
with ``1`` as the first column, and express everything in coordinates of
that basis.  A basis column whose negation is also active spans a line
inside the normal cone, so its coefficient is sign-free just like the
constant's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lp
from .errors import IllConditionedBasis, NotInCone, RankDeficientActiveSet

TOL_CONE = 1e-8
COND_MAX = 1e10


@dataclass(frozen=True, eq=False)
class ConeBasis:
    row: int
    indices: tuple
    basis_matrix: np.ndarray
    alpha0: np.ndarray
    inverse: np.ndarray
    free: np.ndarray

    @property
    def m(self):
        return self.basis_matrix.shape[0]

    @property
    def condition(self):
        return float(np.linalg.norm(self.basis_matrix, np.inf) * np.linalg.norm(self.inverse, np.inf))

    def coefficients(self, g):
        return self.inverse @ np.asarray(g, dtype=float)

    def contains(self, g, tol=TOL_CONE):
        a = self.coefficients(g)
        return bool(np.all(a[~self.free] >= -tol))


@dataclass(frozen=True)
class ConeFamily:
    """Distinct cone bases; ``row_record[k]`` indexes the one serving row k."""

    records: tuple
    row_record: tuple

    def for_row(self, k):
        return self.records[self.row_record[k]]


def _rank(columns):
    if len(columns) == 0:
        return 0
    return int(np.linalg.matrix_rank(np.column_stack(columns), tol=1e-9))


def active_indices(problem, k, q):
    """Gamble indices whose constraint is tight at the row vertex ``q``."""
    A, b, idx = problem.row_constraints(k)
    act = idx[lp.active_constraints(A, b, np.asarray(q, dtype=float))]
    m = problem.m
    if _rank([np.ones(m)] + list(problem.gambles[act])) < m:
        raise RankDeficientActiveSet(f"row {k}: active set does not span R^{m}")
    return act


def reduce_to_independent(gambles, alpha, alpha0, h, tol=TOL_CONE):
    """Drop gambles from ``h = gambles.T @ alpha + alpha0`` until the
    remaining ones (together with the constant) are linearly independent.

    Returns ``(keep, alpha, alpha0)`` with ``keep`` positions into
    ``gambles``; coefficients stay non-negative and ``h`` is reproduced.
    """
    G = np.asarray(gambles, dtype=float)
    h = np.asarray(h, dtype=float)
    alpha = np.array(alpha, dtype=float)
    scale = max(1.0, float(np.abs(alpha).max(initial=0.0)))
    keep = [i for i in range(len(alpha)) if alpha[i] > tol * scale]
    m = h.size
    for _ in range(len(alpha) + 1):
        cols = np.column_stack([np.ones(m)] + [G[i] for i in keep])
        if _rank(list(cols.T)) == cols.shape[1]:
            break
        _, _, vt = np.linalg.svd(cols)
        beta = vt[-1]
        beta_g = beta[1:]
        if np.all(beta_g >= -1e-14):
            beta = -beta
            beta_g = -beta_g
        neg = np.flatnonzero(beta_g < -1e-12 * np.abs(beta_g).max())
        a = alpha[keep]
        ratios = a[neg] / -beta_g[neg]
        j = neg[np.argmin(ratios)]
        c = ratios.min()
        a = a + c * beta_g
        a[j] = 0.0
        alpha[keep] = np.maximum(a, 0.0)
        keep = [i for i in keep if alpha[i] > tol * scale]
    else:
        raise RuntimeError("elimination did not terminate")
    dropped = np.setdiff1d(np.arange(len(alpha)), keep)
    alpha[dropped] = 0.0
    # refresh the constant's coefficient and the kept coefficients exactly
    cols = np.column_stack([np.ones(m)] + [G[i] for i in keep])
    coef = np.linalg.lstsq(cols, h, rcond=None)[0]
    alpha[keep] = np.maximum(coef[1:], 0.0)
    return keep, alpha, float(coef[0])


def complete_to_basis(problem, k, subset, h, active):
    """Complete ``subset`` (gamble indices) with further ``active`` gambles
    to an invertible basis ``[1 | f_j ...]`` and return the ConeBasis.

    Active gambles whose negation is active too are tried first since
    they contribute a whole line to the cone.
    """
    m = problem.m
    F = problem.gambles
    active = [int(i) for i in active]
    paired = set()
    for i in active:
        for j in active:
            if i != j and _is_negative_multiple(F[i], F[j]):
                paired.add(i)
    chosen = [int(i) for i in subset]
    cols = [np.ones(m)] + [F[i] for i in chosen]
    if _rank(cols) < len(cols):
        raise RankDeficientActiveSet(f"row {k}: subset is not independent")
    order = sorted((i for i in active if i not in chosen), key=lambda i: (i not in paired, i))
    for i in order:
        if len(cols) == m:
            break
        if _rank(cols + [F[i]]) == len(cols) + 1:
            cols.append(F[i])
            chosen.append(i)
    if len(cols) < m:
        raise RankDeficientActiveSet(f"row {k}: active gambles have rank {len(cols)} < {m}")
    M = np.column_stack(cols)
    inv = np.linalg.inv(M)
    cond = np.linalg.norm(M, np.inf) * np.linalg.norm(inv, np.inf)
    if not np.isfinite(cond) or cond > COND_MAX:
        raise IllConditionedBasis(f"row {k}: basis condition {cond:.3g} exceeds {COND_MAX:g}")
    alpha0 = inv @ np.asarray(h, dtype=float)
    free = np.array([True] + [i in paired for i in chosen])
    return ConeBasis(row=k, indices=tuple(chosen), basis_matrix=M, alpha0=alpha0,
                     inverse=inv, free=free)


def _is_negative_multiple(f, g):
    nf = np.linalg.norm(f)
    ng = np.linalg.norm(g)
    if nf == 0.0 or ng == 0.0:
        return False
    return bool(np.allclose(f / nf, -g / ng, atol=1e-12))


def perturbed_target(h, directions, tau=1e-6):
    """``h + tau v1 + tau^2 v2 + ...`` with each term scaled to ``|h|``."""
    h = np.asarray(h, dtype=float)
    scale = max(float(np.abs(h).max(initial=0.0)), 1e-300)
    out = h.copy()
    weight = 1.0
    for v in directions:
        weight *= tau
        vn = float(np.abs(v).max(initial=0.0))
        if vn > 0.0:
            out = out + (weight * scale / vn) * np.asarray(v, dtype=float)
    return out


def cone_basis(problem, k, q, h, directions=()):
    """Full pipeline for one row: actives, combination, reduction, completion.

    With ``directions`` the generating subset is chosen for the slightly
    advanced target ``h + tau v1 + ...``, so coordinates of ``h`` that are
    zero belong to gambles the trajectory moves away from.  If that fails
    the plain target is used.
    """
    act = active_indices(problem, k, q)
    G = problem.gambles[act]
    targets = [perturbed_target(h, directions), h] if len(directions) else [h]
    for n, target in enumerate(targets):
        try:
            alpha, alpha0 = lp.nonneg_combination(G, target)
        except NotInCone:
            if n == len(targets) - 1:
                raise
            continue
        keep, _, _ = reduce_to_independent(G, alpha, alpha0, target)
        return complete_to_basis(problem, k, [int(act[i]) for i in keep], h, act)


def build_cone_family(problem, Q, h, directions=()) -> ConeFamily:
    records = []
    by_key = {}
    row_record = []
    for k in range(problem.m):
        basis = cone_basis(problem, k, Q[k], h, directions)
        key = (basis.indices, tuple(basis.free))
        if key not in by_key:
            by_key[key] = len(records)
            records.append(basis)
        row_record.append(by_key[key])
    return ConeFamily(records=tuple(records), row_record=tuple(row_record))


def change_of_basis(Q, basis: ConeBasis):
    """The matrix of ``Q`` in the coordinates of ``basis``."""
    if basis.condition > COND_MAX:
        raise IllConditionedBasis(f"basis condition {basis.condition:.3g} exceeds {COND_MAX:g}")
    return basis.inverse @ np.asarray(Q, dtype=float) @ basis.basis_matrix
