import math

import mpmath
import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.optimize import linprog

import support
from imprecise_ctmc import cones, expstep, solver
from imprecise_ctmc.cones import ConeBasis
from imprecise_ctmc.model import center_seminorm, max_norm, operator_norm

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(2, 4)

T_PRINTED = 0.773941371859648
# printed coefficient table in basis order (f4, f5, constant)
PRINTED_ALPHAS = {
    1: (0.016, 0.230, 0.024),
    2: (0.791, 0.162, 0.021),
    3: (0.540, 0.192, 0.021),
    4: (0.601, 0.184, 0.021),
    5: (0.589, 0.186, 0.021),
}
PRINTED_LIMIT = (0.591, 0.185, 0.021)


def _family(problem, g):
    Q, directions, _ = solver.lex_minimizer(problem, g)
    fam = cones.build_cone_family(problem, Q, g, directions)
    return Q, fam


def _example1_record(ex1):
    g = -support.EX1_H
    Q, fam = _family(ex1, g)
    rec = fam.records[0]
    return g, Q, rec, cones.change_of_basis(Q, rec)


def _to_printed(alpha):
    # our basis is (1, -f5, -f4) for -h: f-coefficients carry over, the
    # constant flips sign, and the constant goes last
    a = np.asarray(alpha)
    return np.array([a[1], a[2], -a[0]])


def _manual_basis(M, alpha0, free=None):
    M = np.asarray(M, dtype=float)
    m = M.shape[0]
    if free is None:
        free = np.array([True] + [False] * (m - 1))
    return ConeBasis(row=0, indices=tuple(range(m - 1)), basis_matrix=M,
                     alpha0=np.asarray(alpha0, dtype=float), inverse=np.linalg.inv(M), free=free)


# matrix exponential


@given(seeds, st.integers(1, 6), st.floats(0.01, 60.0))
def test_expm_matches_scipy(seed, n, scale):
    A = np.random.default_rng(seed).normal(size=(n, n)) * scale / n
    ref = scipy.linalg.expm(A)
    np.testing.assert_allclose(expstep.expm(A), ref, rtol=1e-10, atol=1e-12 * np.abs(ref).max())


def test_exponential_at_zero_is_identity(ex1):
    np.testing.assert_array_equal(expstep.matrix_exponential(np.ones((3, 3)), 0.0), np.eye(3))
    with pytest.raises(ValueError):
        expstep.matrix_exponential(np.eye(2), -1.0)


@pytest.mark.parametrize("a, b, t", [(1.0, 2.0, 0.5), (0.3, 0.01, 7.0), (50.0, 20.0, 0.1)])
def test_two_state_closed_form(a, b, t):
    Q = np.array([[-a, a], [b, -b]])
    d = math.exp(-(a + b) * t)
    expected = np.array([[b + a * d, a - a * d], [b - b * d, a + b * d]]) / (a + b)
    np.testing.assert_allclose(expstep.matrix_exponential(Q, t), expected, rtol=1e-13, atol=1e-15)


@given(seeds, dims, st.floats(0.0, 20.0))
def test_q_matrix_exponential_has_unit_norm(seed, m, t):
    Q = support.random_q_matrix(np.random.default_rng(seed), m)
    P = expstep.matrix_exponential(Q, t)
    assert np.all(P >= -1e-15)
    assert operator_norm(P) == pytest.approx(1.0, abs=1e-13)


def test_example1_first_step_endpoint(ex1):
    _, Q, _, _ = _example1_record(ex1)
    hT = expstep.matrix_exponential(Q, T_PRINTED) @ support.EX1_H
    np.testing.assert_allclose(hT, [-0.182, 0.704, -0.460], atol=5e-4)


# partial sums


def test_example1_partial_sum_table(ex1):
    _, _, rec, QJ = _example1_record(ex1)
    np.testing.assert_allclose(_to_printed(rec.alpha0), [1.6, 0.2, 0.0], atol=1e-12)
    tr = expstep.partial_sum_trace(rec, QJ, T_PRINTED)
    for r, printed in PRINTED_ALPHAS.items():
        np.testing.assert_allclose(_to_printed(tr.alphas[r]), printed, atol=5e-3)
    np.testing.assert_allclose(_to_printed(tr.limit), PRINTED_LIMIT, atol=5e-3)
    assert tr.epsilon == 0.0
    assert not tr.overflow
    assert np.all(tr.alphas[:, 1:] >= 0.0)


def test_positive_invariance_gives_zero_epsilon(rng):
    M = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, -1.0, -1.0]])
    basis = _manual_basis(M, [0.3, 1.0, 2.0])
    QJ = rng.uniform(0.0, 1.0, size=(3, 3))
    tr = expstep.partial_sum_trace(basis, QJ, 2.0)
    assert np.all(tr.alphas[:, 1:] >= 0.0)
    assert tr.epsilon == 0.0 and tr.margin == 0.0


def test_short_horizon_keeps_alpha0(ex1):
    _, _, rec, QJ = _example1_record(ex1)
    tr = expstep.partial_sum_trace(rec, QJ, 1e-12)
    np.testing.assert_allclose(tr.alphas, np.broadcast_to(rec.alpha0, tr.alphas.shape), atol=1e-11)


@given(seeds, dims, st.floats(0.01, 3.0))
def test_trace_matches_direct_partial_sums(seed, m, T):
    rng = np.random.default_rng(seed)
    M = np.column_stack([np.ones(m), rng.normal(size=(m, m - 1))])
    if np.linalg.cond(M) > 1e4:
        return
    basis = _manual_basis(M, rng.normal(size=m))
    QJ = rng.normal(size=(m, m))
    tr = expstep.partial_sum_trace(basis, QJ, T)
    # independent: sum of explicit matrix powers
    total = np.zeros(m)
    worst = 0.0
    for r in range(tr.r_max + 1):
        total = total + np.linalg.matrix_power(T * QJ, r) @ basis.alpha0 / math.factorial(r)
        np.testing.assert_allclose(tr.alphas[r], total, atol=1e-10 * (1 + np.abs(total).max()))
        neg = np.where(basis.free, 0.0, np.maximum(-total, 0.0))
        v = M @ neg
        worst = max(worst, (v.max() - v.min()) / 2)
    np.testing.assert_allclose(tr.limit, scipy.linalg.expm(T * QJ) @ basis.alpha0, atol=1e-9)
    scale = np.abs(tr.alphas).max() * np.abs(M).sum(axis=1).max()
    assert tr.epsilon == pytest.approx(worst, abs=1e-10 * (1 + scale))
    assert tr.margin >= 0.0


def test_single_negative_coefficient():
    M = np.array([[1.0, 2.0, 0.0], [1.0, -1.0, 1.0], [1.0, 0.5, -3.0]])
    basis = _manual_basis(M, [0.0, 1.0, 1.0])
    delta = 0.04
    for j in (1, 2):
        alpha = np.array([5.0, 0.0, 0.0])
        alpha[j] = -delta
        eps = expstep.negative_residue(basis, alpha, widen=False)
        assert eps == pytest.approx(delta * center_seminorm(M[:, j]))
    # the constant is sign free
    assert expstep.negative_residue(basis, [-7.0, 1.0, 1.0]) == 0.0


def test_estimate_epsilon_aggregation():
    def trace(eps, margin=0.0):
        return expstep.PartialSumTrace(1.0, np.zeros((1, 2)), np.zeros(2), eps, margin)

    assert expstep.estimate_epsilon([]) == 0.0
    assert expstep.estimate_epsilon([trace(0.0), trace(0.0)]) == 0.0
    # rows take the max, alternatives within a row the min
    assert expstep.estimate_epsilon([trace(0.1), trace(0.3, 0.01)]) == pytest.approx(0.31)
    assert expstep.estimate_epsilon([[trace(0.5), trace(0.2)], trace(0.1)]) == pytest.approx(0.2)


# error bounds


def test_step_error_bound_against_high_precision():
    eps, qn, dt, iota = 1e-4, 1.82, 0.25, 3.64
    with mpmath.workdps(40):
        ref = (mpmath.exp(mpmath.mpf(qn) * dt) - 1) * mpmath.mpf(iota) / qn * eps
    assert expstep.step_error_bound(eps, dt, qn, iota) == pytest.approx(float(ref), rel=1e-14)


def test_step_error_bound_trivial_cases():
    assert expstep.step_error_bound(0.0, 1.0, 2.0, 4.0) == 0.0
    assert expstep.step_error_bound(1e-3, 0.0, 2.0, 4.0) == 0.0
    assert expstep.step_error_bound(1e-3, 0.5, 0.0, 4.0) == pytest.approx(0.5 * 4.0 * 1e-3)
    assert math.isinf(expstep.step_error_bound(1e-3, 1e3, 1.0, 2.0))


pos = st.floats(1e-6, 5.0)


@given(pos, pos, pos, pos, st.floats(1.01, 3.0))
def test_step_error_bound_is_monotone(eps, dt, qn, iota, k):
    base = expstep.step_error_bound(eps, dt, qn, iota)
    assert expstep.step_error_bound(eps * k, dt, qn, iota) >= base
    assert expstep.step_error_bound(eps, dt * k, qn, iota) >= base
    assert expstep.step_error_bound(eps, dt, qn * k, iota) >= base * (1 - 1e-12)
    assert expstep.step_error_bound(eps, dt, qn, iota * k) >= base
    # the bound never beats the iota = 2|Q| simplification
    assert base <= 2 * math.expm1(qn * dt) * eps * (iota / (2 * qn)) * (1 + 1e-12)


def test_worst_case_trivial_and_second_order():
    assert expstep.worst_case_step_error(0.0, 1.82, 0.45) == 0.0
    for dt in (1e-3, 1e-4):
        ratio = expstep.worst_case_step_error(dt, 1.82, 0.45) / dt**2
        assert ratio == pytest.approx(1.82**2 * 0.45, rel=2 * 1.82 * dt)


@pytest.mark.parametrize("qn, h_c, T", [(1.82, 0.45, 1.0), (5.0, 2.0, 0.3), (0.1, 1.0, 4.0)])
def test_worst_case_matches_error_growth_ode(qn, h_c, T):
    # E' = |Q| (2 |h|_c (e^{t|Q|} - 1) + E), E(0) = 0
    sol = solve_ivp(lambda t, E: qn * (2 * h_c * math.expm1(t * qn) + E), (0.0, T), [0.0],
                    rtol=1e-12, atol=1e-15, dense_output=True)
    for t in np.linspace(0.0, T, 7)[1:]:
        assert expstep.worst_case_step_error(t, qn, h_c) == pytest.approx(sol.sol(t)[0], rel=1e-9)


@given(st.floats(1e-10, 2e-3), st.floats(0.1, 3.0), st.floats(0.0, 3.0))
def test_worst_case_series_branch_is_continuous(dt, qn, h_c):
    with mpmath.workdps(60):
        x = mpmath.mpf(dt) * qn
        direct = 2 * h_c * float(1 - mpmath.exp(x) * (1 - x))
    assert expstep.worst_case_step_error(dt, qn, h_c) == pytest.approx(direct, rel=1e-9, abs=1e-300)


@given(seeds, dims, st.floats(0.0, 10.0))
def test_range_bound_holds(seed, m, dt):
    rng = np.random.default_rng(seed)
    P, _ = support.random_model(rng, m)
    g = rng.normal(size=m)
    Q, _, _ = solver.lex_minimizer(P, g)
    out = expstep.matrix_exponential(Q, dt) @ g
    assert np.all(out >= g.min() - 1e-12) and np.all(out <= g.max() + 1e-12)
    exact = support.ode_oracle(P, g, dt, rtol=1e-9, atol=1e-11) if dt > 0 else g
    assert max_norm(out - exact) <= expstep.range_step_error(center_seminorm(g)) + 1e-9


# interval guess


def test_example1_guess(ex1):
    _, _, rec, QJ = _example1_record(ex1)
    dt = expstep.initial_interval_guess(rec, QJ, 1.0, 1e-6)
    # linear crossing of the f4 coefficient, by hand from the printed Q_J row
    by_hand = 0.99 * 1.6 / (1.6 * (1.9 / 1.5) + 0.1 * 0.2)
    assert dt == pytest.approx(by_hand, abs=1e-12)
    assert dt == pytest.approx(T_PRINTED, abs=1e-8)


def test_guess_fallbacks():
    M = np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, -1.0, -1.0]])
    basis = _manual_basis(M, [0.0, 0.0, 1.0])
    QJ = np.zeros((3, 3))
    QJ[1, 2] = -1.0  # zero coefficient pushed negative at once
    assert expstep.initial_interval_guess(basis, QJ, 0.5, 1e-6) == 1e-6
    assert expstep.initial_interval_guess(basis, np.zeros((3, 3)), 0.5, 1e-6) == 0.5
    assert expstep.initial_interval_guess(basis, np.abs(QJ), 0.5, 1e-6) == 0.5
    QJ = np.zeros((3, 3))
    QJ[2, 2] = -1.0  # crossing at t = 1, capped by the remaining time
    assert expstep.initial_interval_guess(basis, QJ, 0.5, 1e-6) == 0.5
    assert expstep.initial_interval_guess(basis, QJ, 5.0, 1e-6) == pytest.approx(0.99)


# properties on random models


def _random_step(seed, m):
    rng = np.random.default_rng(seed)
    P, _ = support.random_model(rng, m)
    g = rng.normal(size=m)
    Q, fam = _family(P, g)
    QJs = [cones.change_of_basis(Q, r) for r in fam.records]
    T = rng.uniform(0.05, 1.5)
    return rng, P, g, Q, fam, QJs, T


def _convex_hull_contains(points, x, tol=1e-9):
    k = len(points)
    A = np.vstack([np.array(points).T, np.ones((1, k))])
    b = np.concatenate([x, [1.0]])
    res = linprog(np.zeros(k), A_eq=A, b_eq=b, bounds=[(0, None)] * k, method="highs",
                  options={"primal_feasibility_tolerance": tol})
    return res.status == 0


@given(seeds, dims)
def test_convexity_transfer(seed, m):
    rng, P, g, Q, fam, QJs, T = _random_step(seed, m)
    rec, QJ = fam.records[0], QJs[0]
    tr = expstep.partial_sum_trace(rec, QJ, T)
    for t in rng.uniform(0.0, T, size=4):
        inner = expstep.partial_sum_trace(rec, QJ, t)
        for s in range(1, min(6, tr.r_max, inner.r_max) + 1):
            assert _convex_hull_contains(tr.alphas[: s + 1], inner.alphas[s])
        if np.all(tr.alphas[:, ~rec.free] >= 0):
            assert np.all(inner.alphas[:, ~rec.free] >= -1e-12)


@given(seeds, dims)
def test_decomposition_bound(seed, m):
    rng, P, g, Q, fam, QJs, T = _random_step(seed, m)
    traces = [expstep.partial_sum_trace(r, QJ, T) for r, QJ in zip(fam.records, QJs)]
    eps = expstep.estimate_epsilon(traces)
    r_max = min(tr.r_max for tr in traces)
    for t in rng.uniform(0.0, T, size=3):
        x = g.copy()
        term = g.copy()
        for s in range(1, r_max + 1):
            term = t * Q @ term / s
            x = x + term
            if s % 3 and s != r_max:
                continue
            low = np.array([support.scipy_row_min(P, k, x)[0] for k in range(m)])
            gap = max_norm(Q @ x - low)
            assert gap <= P.imprecision_bound * eps + 1e-7 * (1 + max_norm(x))


@given(seeds, dims)
def test_epsilon_monotone_in_horizon(seed, m):
    rng, P, g, Q, fam, QJs, T = _random_step(seed, m)
    for rec, QJ in zip(fam.records, QJs):
        eps_T = expstep.partial_sum_trace(rec, QJ, T).epsilon
        for t in rng.uniform(0.0, T, size=3):
            assert expstep.partial_sum_trace(rec, QJ, t).epsilon <= eps_T + 1e-9


@given(seeds, dims)
def test_exponential_consistency(seed, m):
    rng, P, g, Q, fam, QJs, T = _random_step(seed, m)
    direct = expstep.matrix_exponential(Q, T) @ g
    for rec, QJ in zip(fam.records, QJs):
        via_basis = rec.basis_matrix @ expstep.partial_sum_trace(rec, QJ, T).limit
        assert max_norm(via_basis - direct) <= 1e-7 * (1 + max_norm(g))
