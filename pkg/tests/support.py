"""Shared fixtures data and independent oracles for the test-suite.

Oracles here deliberately avoid the package's own LP code: row minima come
from scipy's HiGHS or from brute-force vertex enumeration, and reference
trajectories from a high-order ODE integrator.
"""

import itertools
from pathlib import Path

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import linprog

from imprecise_ctmc.cli import load_problem
from imprecise_ctmc.model import ImpreciseQMatrix

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"
EX1_H = np.array([-0.7, 1.7, -1.0])


def example1():
    return load_problem(PROBLEMS / "example1.json")


def example2():
    return load_problem(PROBLEMS / "example2.json")


def random_q_matrix(rng, m, scale=1.0):
    Q = rng.uniform(0.0, scale, size=(m, m))
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    return Q


def random_model(rng, m, n_extra=3, scale=1.0, spread=0.3):
    """Bounded model around a random Q-matrix, with indicators and extra gambles."""
    Q0 = random_q_matrix(rng, m, scale)
    gambles = [row for row in np.eye(m)]
    while len(gambles) < m + n_extra:
        f = np.round(rng.uniform(-1.0, 1.0, size=m), 3)
        if np.ptp(f) > 0.1:
            gambles.append(f)
    F = np.array(gambles)
    slack = rng.uniform(0.0, spread, size=F.shape[0])[:, None] * rng.uniform(0.2, 1.0, size=(1, m))
    L = (Q0 @ F.T).T - slack
    return ImpreciseQMatrix(F, L), Q0


def random_gamble(rng, m):
    return rng.uniform(-1.0, 1.0, size=m)


def enumerate_vertices(problem, k):
    """All vertices of row k by solving every (m-1)-subset of constraints."""
    A, b, _ = problem.row_constraints(k)
    m = problem.m
    found = []
    for subset in itertools.combinations(range(A.shape[0]), m - 1):
        M = np.vstack([np.ones(m), A[list(subset)]])
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        q = np.linalg.solve(M, np.concatenate([[0.0], b[list(subset)]]))
        if np.all(A @ q >= b - 1e-9 * (1.0 + np.abs(b))):
            if not any(np.allclose(q, p, atol=1e-10) for p in found):
                found.append(q)
    return np.array(found)


def all_vertices(problem):
    return [enumerate_vertices(problem, k) for k in range(problem.m)]


def lower_by_vertices(vertices, h):
    return np.array([float((V @ h).min()) for V in vertices])


def scipy_row_min(problem, k, h):
    A, b, _ = problem.row_constraints(k)
    m = problem.m
    res = linprog(h, A_ub=-A, b_ub=-b, A_eq=np.ones((1, m)), b_eq=[0.0],
                  bounds=[(None, None)] * m, method="highs")
    assert res.status == 0, res.message
    return res.fun, res.x


def ode_oracle(problem, h, T, upper=False, vertices=None, rtol=1e-12, atol=1e-13):
    """Reference solution of h' = lowQ h (or the upper version) by DOP853."""
    V = vertices if vertices is not None else all_vertices(problem)
    sign = -1.0 if upper else 1.0
    g0 = sign * np.asarray(h, dtype=float)
    sol = solve_ivp(lambda t, y: lower_by_vertices(V, y), (0.0, T), g0, method="DOP853",
                    rtol=rtol, atol=atol)
    assert sol.success
    return sign * sol.y[:, -1]


def sample_feasible(problem, k, rng, n, vertices=None):
    """Random convex combinations of row-k vertices (feasible by convexity)."""
    V = vertices if vertices is not None else enumerate_vertices(problem, k)
    w = rng.dirichlet(np.ones(len(V)), size=n)
    return w @ V
