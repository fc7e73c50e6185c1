"""Matrix-exponential steps and their certificates.

A step ``h -> expm(dt Q) h`` is exact when every Taylor partial sum of the
trajectory, written in a row's cone basis, keeps non-negative coordinates
(the constant and other sign-free columns excepted) at the horizon; by
convexity of partial sums in t the whole interval then stays in the cone.
Otherwise the negative residue ``eps`` feeds the error bound
``(exp(n dt) - 1) * iota / n * eps`` with ``n`` the norm of the Q-set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cones import TOL_CONE, ConeBasis
from .model import center_seminorm

EXPM_TOL = 1e-15
TAIL_TOL = 1e-12
R_CAP = 200
GUESS_MARGIN = 0.99
_U = np.finfo(float).eps


def expm(A):
    """Scaling and squaring on a truncated Taylor series.

    The matrix is scaled by ``2**-s`` until its inf-norm is at most 1/2,
    the series is summed until terms drop below machine precision, and the
    result is squared ``s`` times.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[0]
    norm = np.abs(A).sum(axis=1).max(initial=0.0)
    s = 0
    if norm > 0.5:
        s = int(math.ceil(math.log2(norm / 0.5)))
    B = A / (2.0 ** s)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 40):
        term = term @ B / k
        result = result + term
        if np.abs(term).max(initial=0.0) <= EXPM_TOL * np.abs(result).max():
            break
    for _ in range(s):
        result = result @ result
    return result


def matrix_exponential(Q, t):
    if t < 0:
        raise ValueError("t must be non-negative")
    return expm(t * np.asarray(Q, dtype=float))


def negative_residue(basis: ConeBasis, alpha, slack=0.0, widen=True):
    """Center seminorm of ``M_J @ alpha^-``: the part of ``M_J @ alpha``
    sticking out of the cone.

    Restricted coordinates within ``slack`` of zero are indistinguishable
    from zero in floating point and count as on the boundary.  If any
    coordinate is clearly outside and ``widen`` is set, the result covers
    every negative part within ``slack`` per coordinate of the computed one.
    """
    a = np.asarray(alpha, dtype=float)
    out = ~basis.free & (a < -slack)
    if not out.any():
        return 0.0
    res = center_seminorm(basis.basis_matrix @ np.where(out, -a, 0.0))
    if widen and slack > 0.0:
        # |M d|_c <= |M d|_inf <= |M_restricted|_inf * max|d|
        restricted = np.abs(basis.basis_matrix[:, ~basis.free]).sum(axis=1).max()
        res += float(restricted) * slack
    return res


@dataclass(frozen=True, eq=False)
class PartialSumTrace:
    horizon: float
    alphas: np.ndarray
    limit: np.ndarray
    epsilon: float
    margin: float
    overflow: bool = False

    @property
    def r_max(self):
        return self.alphas.shape[0] - 1


def partial_sum_trace(basis: ConeBasis, QJ, T, *, tail_tol=TAIL_TOL, r_cap=R_CAP):
    """Coefficient vectors ``p_r(T QJ) alpha0`` for r = 0..r_max.

    ``epsilon`` is the largest negative residue over the computed sums.
    Coordinates within the round-off (and, for the last sum, truncation)
    uncertainty of zero are treated as on the boundary; ``margin`` is what
    that uncertainty adds to the residue of coordinates clearly outside.
    """
    QJ = np.asarray(QJ, dtype=float)
    a0 = np.asarray(basis.alpha0, dtype=float)
    a_norm = float(np.abs(a0).max(initial=0.0))
    x = float(T) * float(np.abs(QJ).sum(axis=1).max(initial=0.0))
    alphas = [a0.copy()]
    term = a0.copy()
    total = a0.copy()
    term_mass = a_norm
    overflow = False
    tail = 0.0
    r = 0
    while True:
        if r >= r_cap:
            overflow = True
            break
        r += 1
        with np.errstate(over="ignore", invalid="ignore"):
            term = (T / r) * (QJ @ term)
            total = total + term
        if not np.all(np.isfinite(total)):
            overflow = True
            break
        alphas.append(total.copy())
        term_mass += float(np.abs(term).max(initial=0.0))
        if a_norm == 0.0 or x == 0.0:
            tail = 0.0
            break
        log_tail = (r + 1) * math.log(x) - math.lgamma(r + 2) + x
        tail = math.exp(log_tail) if log_tail < 700.0 else math.inf
        if r >= x and tail <= tail_tol:
            break
    alphas = np.array(alphas)
    roundoff = 4.0 * (r + basis.m) * _U * (term_mass + basis.condition * a_norm)
    # the last sum also stands in for all longer ones
    slacks = np.full(len(alphas), roundoff)
    slacks[-1] += tail * a_norm
    eps = 0.0
    eps_wide = 0.0
    for a, sl in zip(alphas, slacks):
        eps = max(eps, negative_residue(basis, a, sl, widen=False))
        eps_wide = max(eps_wide, negative_residue(basis, a, sl))
    margin = eps_wide - eps
    if overflow:
        margin = math.inf
    return PartialSumTrace(horizon=float(T), alphas=alphas, limit=alphas[-1],
                           epsilon=eps, margin=margin, overflow=overflow)


def estimate_epsilon(traces):
    """Epsilon valid for every row: max over the cone records.

    ``traces`` is a sequence of traces, or a sequence of lists of
    alternative traces for the same row (the best alternative counts).
    """
    worst = 0.0
    for tr in traces:
        if isinstance(tr, PartialSumTrace):
            val = tr.epsilon + tr.margin
        else:
            val = min(t.epsilon + t.margin for t in tr)
        worst = max(worst, val)
    return worst


def step_error_bound(epsilon, dt, qset_norm, iota_bound):
    """Growth of the error over one exponential step with cone residue eps."""
    if epsilon == 0.0 or dt == 0.0 or iota_bound == 0.0:
        return 0.0
    if qset_norm == 0.0:
        return dt * iota_bound * epsilon
    if qset_norm * dt > 700.0:
        return math.inf
    return math.expm1(qset_norm * dt) * (iota_bound / qset_norm) * epsilon


def worst_case_step_error(dt, qset_norm, h_c):
    """Cone-free bound ``2 |h|_c (1 - e^x (1 - x))`` with ``x = dt * |Q-set|``."""
    x = qset_norm * dt
    if x < 1e-3:
        # series 1 - e^x(1-x) = x^2/2 + x^3/3 + x^4/8 + ..., avoids cancellation
        val = x * x / 2.0 + x ** 3 / 3.0 + x ** 4 / 8.0 + x ** 5 / 30.0
    elif x > 700.0:
        return math.inf
    else:
        val = 1.0 - math.exp(x) * (1.0 - x)
    return 2.0 * h_c * val


def range_step_error(h_c):
    """Both the exact solution and ``expm(dt Q) h`` stay in ``[min h, max h]``,
    so no step can be off by more than the variational seminorm of ``h``."""
    return 2.0 * h_c


def initial_interval_guess(basis: ConeBasis, QJ, remaining, dt_min, margin=GUESS_MARGIN):
    """First trial step from the linearization ``alpha0 + t QJ alpha0 >= 0``.

    The crossing time of the first restricted coordinate is scaled by
    ``margin`` so that the step ends strictly inside the cone.
    """
    a0 = basis.alpha0
    v = np.asarray(QJ, dtype=float) @ a0
    best = math.inf
    scale = max(1.0, float(np.abs(a0).max(initial=0.0)))
    v_dust = TOL_CONE * float(np.abs(v).max(initial=0.0))
    for j in np.flatnonzero(~basis.free):
        if v[j] >= -v_dust:
            continue
        if a0[j] <= TOL_CONE * scale:
            return min(dt_min, remaining)
        best = min(best, a0[j] / -v[j])
    if math.isinf(best):
        return remaining
    return min(max(margin * best, dt_min), remaining)


@dataclass(frozen=True)
class StepCertificate:
    t_start: float
    dt: float
    Q: np.ndarray = field(repr=False)
    epsilon: float
    margin: float
    step_error: float
    allowed: float
    method: str
    exact: bool
    halvings: int = 0
    interior_min: float | None = None
