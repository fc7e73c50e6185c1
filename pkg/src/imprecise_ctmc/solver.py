"""Drivers for the imprecise Kolmogorov backward equation ``h' = lowQ h``.

``solve_adaptive`` takes matrix-exponential steps whose length is chosen
from the normal-cone certificate; the uniform-grid solvers are the usual
fixed-step baselines and double as reference oracles in the tests.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import cones, expstep, lp
from .errors import BudgetExhausted, NumericalError, StepTooCoarse
from .expstep import StepCertificate
from .model import ImpreciseQMatrix, as_gamble, center_seminorm, indicator, max_norm, variational_seminorm

log = logging.getLogger(__name__)

DT_MIN_ABS = 1e-9
DT_MIN_REL = 1e-6


@dataclass
class SolveReport:
    h_T: np.ndarray
    max_err: float
    steps: list = field(default_factory=list)
    lp_calls: int = 0
    T: float = 0.0
    E: float = 0.0
    upper: bool = False
    wall_time: float | None = None

    @property
    def n_steps(self):
        return len(self.steps)

    @property
    def all_exact(self):
        return all(s.exact for s in self.steps)


@dataclass
class GridReport:
    h_T: np.ndarray
    n: int
    bound: float
    variant: str
    lp_calls: int = 0


def _dt_min(remaining, dt_min):
    if dt_min is not None:
        return dt_min
    return max(DT_MIN_ABS, remaining * DT_MIN_REL)


def lex_minimizer(problem: ImpreciseQMatrix, g, depth=2):
    """Minimizing element of the set for ``g``, with ties broken along the
    trajectory's derivatives.

    ``v1 = lowQ g`` is unique; among the minimizers for ``g`` each row
    then minimizes ``q @ v1``, giving ``v2 = Q v1``, and so on.  The
    result is the vertex that stays optimal on ``[0, dt]`` for small
    ``dt``.  Returns ``(Q, directions, lp_calls)``.
    """
    m = problem.m
    sols = [lp.minimize_row(problem, k, g) for k in range(m)]
    calls = m
    Q = np.vstack([s.vertex for s in sols])
    tied = [k for k in range(m) if not sols[k].unique]
    directions = []
    v = Q @ g
    for _ in range(depth):
        if not tied:
            break
        directions.append(v)
        for k in tied:
            Q[k] = lp.minimize_row(problem, k, g, tie_break=directions).vertex
            calls += 1
        v = Q @ v
    return Q, directions, calls


def _interior_min(family, QJs, traces, dt, samples=20):
    """Smallest restricted coefficient of ``p_s(t QJ) alpha0`` over interior t."""
    worst = math.inf
    for rec, QJ, tr in zip(family.records, QJs, traces):
        restricted = ~rec.free
        if not restricted.any():
            continue
        for t in np.linspace(0.0, dt, samples + 2)[1:-1]:
            term = rec.alpha0.copy()
            total = term.copy()
            worst = min(worst, total[restricted].min())
            for r in range(1, tr.r_max + 1):
                term = (t / r) * (QJ @ term)
                total = total + term
                worst = min(worst, total[restricted].min())
    return worst


@dataclass
class _Trial:
    dt: float
    allowed: float
    err: float
    eps: float
    margin: float
    cone_err: float
    grid_err: float
    range_err: float
    traces: list | None

    @property
    def ok(self):
        return self.err <= self.allowed


def _certify(family, QJs, dt, budget, remaining, qn, iota, h_c):
    """Error bound for a trial step of length ``dt`` from every available source."""
    eps = margin = cone_err = math.inf
    traces = None
    if family is not None:
        traces = [expstep.partial_sum_trace(rec, QJ, dt) for rec, QJ in zip(family.records, QJs)]
        eps = max(tr.epsilon for tr in traces)
        total = expstep.estimate_epsilon(traces)
        margin = total - eps
        cone_err = expstep.step_error_bound(total, dt, qn, iota)
    grid_err = expstep.worst_case_step_error(dt, qn, h_c)
    range_err = expstep.range_step_error(h_c)
    return _Trial(dt=dt, allowed=budget * dt / remaining,
                  err=min(cone_err, grid_err, range_err), eps=eps, margin=margin,
                  cone_err=cone_err, grid_err=grid_err, range_err=range_err, traces=traces)


def _method(trial):
    if trial.err == trial.cone_err:
        return "exp-exact" if trial.eps <= cones.TOL_CONE and trial.err == 0.0 else "exp-approx"
    return "grid" if trial.err == trial.grid_err else "range"


def solve_adaptive(problem: ImpreciseQMatrix, h, T, E, *, dt_min=None, upper=False,
                   debug_invariants=False, guess_margin=expstep.GUESS_MARGIN) -> SolveReport:
    """Approximate ``h_T`` with certified error at most ``E``.

    Each step minimizes the rate matrix, builds the cone bases, guesses a
    step from the linearized cone coordinates and halves it until the
    certified error fits the proportional share of the remaining budget.
    A step that had to start from the minimal length is doubled instead
    while the certificate holds.  A nearly constant ``h`` (spread within
    the budget) is advanced to ``T`` in a single step.

    With ``upper=True`` the upper solution ``h' = upQ h`` is computed via
    conjugacy, i.e. the lower solution from ``-h`` is negated.
    """
    start = time.perf_counter()
    h0 = as_gamble(h, problem.m)
    if T < 0:
        raise ValueError("T must be non-negative")
    if T > 0 and not E > 0:
        raise ValueError("the error budget E must be positive")
    g = -h0 if upper else h0.copy()
    sign = -1.0 if upper else 1.0
    report = SolveReport(h_T=h0.copy(), max_err=0.0, T=float(T), E=float(E), upper=upper)
    if T == 0:
        report.wall_time = time.perf_counter() - start
        return report

    qn = problem.qset_norm
    iota = problem.imprecision_bound
    t = 0.0
    remaining = float(T)
    budget = float(E)

    while remaining > 0.0:
        Q, directions, calls = lex_minimizer(problem, g)
        report.lp_calls += calls
        floor = min(_dt_min(remaining, dt_min), remaining)
        try:
            family = cones.build_cone_family(problem, Q, g, directions)
            QJs = [cones.change_of_basis(Q, rec) for rec in family.records]
            report.lp_calls += problem.m  # phase-1 combination per row
            dt = min(expstep.initial_interval_guess(rec, QJ, remaining, floor, guess_margin)
                     for rec, QJ in zip(family.records, QJs))
        except NumericalError as exc:
            log.debug("cone construction failed at t=%g: %s", t, exc)
            family, QJs = None, None
            dt = remaining
        h_c = center_seminorm(g)
        if expstep.range_step_error(h_c) <= budget:
            # nearly constant: finishing in one step costs at most the spread
            dt = remaining
        grow = dt <= floor < remaining

        halvings = 0
        trial = _certify(family, QJs, dt, budget, remaining, qn, iota, h_c)
        while not trial.ok:
            if dt <= floor:
                report.h_T = sign * g
                report.wall_time = time.perf_counter() - start
                raise BudgetExhausted(
                    f"at t={t:.6g} the step error {trial.err:.3g} exceeds the allowance "
                    f"{trial.allowed:.3g} even at the minimal step {dt:.3g}", report)
            dt = max(dt / 2.0, floor)
            halvings += 1
            trial = _certify(family, QJs, dt, budget, remaining, qn, iota, h_c)
        while grow and trial.dt < remaining:
            bigger = _certify(family, QJs, min(2.0 * trial.dt, remaining), budget, remaining,
                              qn, iota, h_c)
            if not bigger.ok:
                break
            trial = bigger
        dt = trial.dt

        method = _method(trial)
        interior = None
        if debug_invariants and family is not None:
            interior = _interior_min(family, QJs, trial.traces, dt)
        report.steps.append(StepCertificate(
            t_start=t, dt=dt, Q=Q, epsilon=trial.eps if family is not None else math.nan,
            margin=trial.margin if family is not None else math.nan, step_error=trial.err,
            allowed=trial.allowed, method=method, exact=method == "exp-exact",
            halvings=halvings, interior_min=interior))
        g = expstep.matrix_exponential(Q, dt) @ g
        report.max_err += trial.err
        budget -= trial.err
        t += dt
        remaining = T - t if dt < remaining else 0.0
        if remaining <= 1e-12 * T:
            remaining = 0.0

    report.h_T = sign * g
    report.wall_time = time.perf_counter() - start
    return report


# --- uniform grids -------------------------------------------------------

def uniform_grid_bound(n, T, qset_norm, h_norm):
    """Error bound of n equal exponential steps.

    ``h_norm`` may be the center seminorm of the initial gamble: it bounds
    the seminorm of every later iterate, exact or approximate.
    """
    return n * expstep.worst_case_step_error(T / n, qset_norm, h_norm)


def euler_grid_bound(n, T, qset_norm, h_norm):
    delta = T / n
    return n * delta * delta * h_norm * qset_norm ** 2


def required_steps_uniform(T, qset_norm, h_norm, E):
    """Smallest n with ``uniform_grid_bound(n, ...) <= E`` (bisection)."""
    if uniform_grid_bound(1, T, qset_norm, h_norm) <= E:
        return 1
    hi = 2
    while uniform_grid_bound(hi, T, qset_norm, h_norm) > E:
        hi *= 2
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if uniform_grid_bound(mid, T, qset_norm, h_norm) <= E:
            hi = mid
        else:
            lo = mid
    return hi


class _RowCache:
    """Reuse a row's vertex while the gamble stays in its cone basis."""

    def __init__(self, problem):
        self.problem = problem
        self.rows = [None] * problem.m
        self.lp_calls = 0
        lo, hi = problem.row_ranges
        # rows whose polytope is a single point (up to LP round-off) never need an LP
        width = np.abs(hi - lo).max(axis=1)
        scale = 1.0 + np.abs(lo).max(axis=1)
        self.fixed = [lo[k].copy() if width[k] <= 1e-12 * scale[k] else None
                      for k in range(problem.m)]

    @property
    def constant(self):
        """The rate matrix if every row is fixed, else None."""
        if any(row is None for row in self.fixed):
            return None
        return np.array(self.fixed)

    def minimizer(self, g):
        m = self.problem.m
        Q = np.empty((m, m))
        for k in range(m):
            if self.fixed[k] is not None:
                Q[k] = self.fixed[k]
                continue
            cached = self.rows[k]
            if cached is not None and cached[1].contains(g, tol=0.0):
                Q[k] = cached[0]
                continue
            sol = lp.minimize_row(self.problem, k, g)
            self.lp_calls += 1
            Q[k] = sol.vertex
            try:
                basis = cones.cone_basis(self.problem, k, sol.vertex, g)
                self.rows[k] = (sol.vertex, basis)
            except NumericalError:
                self.rows[k] = None
        return Q


def solve_uniform_exp(problem: ImpreciseQMatrix, h, T, n) -> GridReport:
    if n < 1:
        raise ValueError("n must be at least 1")
    g = as_gamble(h, problem.m).copy()
    bound = uniform_grid_bound(n, T, problem.qset_norm, center_seminorm(g))
    cache = _RowCache(problem)
    delta = T / n
    last_Q, P = None, None
    for _ in range(n):
        Q = cache.minimizer(g)
        if last_Q is None or not np.array_equal(Q, last_Q):
            last_Q, P = Q, expstep.matrix_exponential(Q, delta)
        g = P @ g
    return GridReport(h_T=g, n=n, bound=bound, variant="exp", lp_calls=cache.lp_calls)


def solve_uniform_euler(problem: ImpreciseQMatrix, h, T, n) -> GridReport:
    if n < 1:
        raise ValueError("n must be at least 1")
    qn = problem.qset_norm
    if n < T * qn:
        raise StepTooCoarse(f"n={n} is below T*|Q-set| = {T * qn:.6g}")
    g = as_gamble(h, problem.m).copy()
    bound = euler_grid_bound(n, T, qn, center_seminorm(g))
    cache = _RowCache(problem)
    delta = T / n
    Q = cache.constant
    if Q is not None:
        # n identical steps: (I + delta Q)^n by repeated squaring
        g = np.linalg.matrix_power(np.eye(problem.m) + delta * Q, n) @ g
    else:
        for _ in range(n):
            Q = cache.minimizer(g)
            g = g + delta * (Q @ g)
    return GridReport(h_T=g, n=n, bound=bound, variant="euler", lp_calls=cache.lp_calls)


# --- transition probabilities --------------------------------------------

@dataclass
class TransitionBounds:
    state: int
    lower: np.ndarray
    upper: np.ndarray
    lower_report: SolveReport
    upper_report: SolveReport
    spread_lower: float
    spread_upper: float
    converged: bool


def transition_bounds(problem: ImpreciseQMatrix, i, T, E, **kwargs) -> TransitionBounds:
    """Lower and upper probabilities of being in state ``i`` at time T,
    one entry per initial state."""
    e = indicator(problem.m, i)
    lo = solve_adaptive(problem, e, T, E, **kwargs)
    up = solve_adaptive(problem, -e, T, E, **kwargs)
    lower = lo.h_T
    upper = -up.h_T
    spread_lo = variational_seminorm(lower)
    spread_up = variational_seminorm(upper)
    return TransitionBounds(state=i, lower=lower, upper=upper, lower_report=lo, upper_report=up,
                            spread_lower=spread_lo, spread_upper=spread_up,
                            converged=bool(spread_lo < 2 * E and spread_up < 2 * E))
