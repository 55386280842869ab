import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kernelcce.equilibrium import (CCE_TOL, JointDistribution, cce_violation, find_cce,
                                   matrix_game_value)
from kernelcce.lp import LinearProgram, lp_solve


def test_lp_trivial_examples():
    res = lp_solve(LinearProgram(c=[0.0], A_eq=[[1.0]], b_eq=[1.0], bounds=[(0.0, 2.0)]))
    assert res.status == "feasible" and res.x[0] == pytest.approx(1.0)
    res = lp_solve(LinearProgram(c=[1.0], A_ub=[[1.0]], b_ub=[3.0]))
    assert res.status == "optimal" and res.objective == pytest.approx(3.0)


def test_matching_pennies_cce():
    P = np.array([[1.0, -1.0], [-1.0, 1.0]])
    assert cce_violation(np.full((2, 2), 0.25), P, P) == 0.0
    sigma = find_cce(P, P).sigma
    assert cce_violation(sigma, P, P) <= CCE_TOL


def test_constant_payoff_any_distribution():
    P = np.full((3, 3), 0.7)
    sigma = find_cce(P, P).sigma
    assert sigma.min() >= 0 and sigma.sum() == pytest.approx(1.0, abs=1e-12)


def brute_force_row_marginals(step_count=250):
    """All row-0 masses of CCEs of Q1 = Q2 = [[2,2],[0,0]] on a grid of mesh 1/step_count.

    The payoffs are integers, so constraints are checked exactly in units of 1/N.
    """
    N = step_count
    Q = np.array([[2, 2], [0, 0]])
    masses = set()
    j, k = np.meshgrid(np.arange(N + 1), np.arange(N + 1), indexing="ij")
    for i in range(N + 1):
        ok = i + j + k <= N
        l = N - i - j - k
        s = [i, j, k, l]  # s00, s01, s10, s11 in units of 1/N
        e = sum(Q.ravel()[n] * s[n] for n in range(4))
        row0, row1 = i + j, k + l
        col0, col1 = i + k, j + l
        dev_max = np.maximum(Q[0, 0] * col0 + Q[0, 1] * col1, Q[1, 0] * col0 + Q[1, 1] * col1)
        dev_min = np.minimum(Q[0, 0] * row0 + Q[1, 0] * row1, Q[0, 1] * row0 + Q[1, 1] * row1)
        feasible = ok & (e >= dev_max) & (e <= dev_min)
        masses.update(np.unique((i + j)[feasible]).tolist())
    return masses


def test_dominant_row_forces_row_marginal():
    assert brute_force_row_marginals() == {250}
    Q = np.array([[2.0, 2.0], [0.0, 0.0]])
    joint = find_cce(Q, Q)
    np.testing.assert_allclose(joint.row_marginal, [1.0, 0.0], atol=1e-8)


def test_joint_distribution_marginals():
    sigma = np.outer([0.2, 0.8], [0.6, 0.4])
    jd = JointDistribution(sigma)
    np.testing.assert_array_equal(jd.row_marginal, sigma.sum(1))
    np.testing.assert_array_equal(jd.col_marginal, sigma.sum(0))
    np.testing.assert_allclose(jd.row_marginal, [0.2, 0.8])
    np.testing.assert_allclose(jd.col_marginal, [0.6, 0.4])


def test_random_cce_pairs_validate():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 9))
        Q1 = rng.uniform(-3, 3, size=(n, n))
        Q2 = rng.uniform(-3, 3, size=(n, n))
        sigma = find_cce(Q1, Q2).sigma
        assert cce_violation(sigma, Q1, Q2) <= 1e-8
        assert abs(sigma.sum() - 1.0) <= 1e-9 and sigma.min() >= 0.0


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (3, 3), elements=st.floats(-3, 3)),
       arrays(np.float64, (3, 3), elements=st.floats(-3, 3)),
       st.floats(0.1, 10.0))
def test_cce_output_feasible_after_positive_scaling(Q1, Q2, c):
    sigma = find_cce(Q1, Q2).sigma
    assert cce_violation(sigma, c * Q1, c * Q2) <= 1e-8 * max(1.0, c)


def test_gap_objective_flag():
    rng = np.random.default_rng(3)
    Q2 = rng.uniform(-2, 0, size=(3, 3))
    Q1 = Q2 + rng.uniform(0, 2, size=(3, 3))
    base = find_cce(Q1, Q2)
    best = find_cce(Q1, Q2, maximize_gap=True)
    assert cce_violation(best.sigma, Q1, Q2) <= CCE_TOL
    assert best.expect(Q1 - Q2) >= base.expect(Q1 - Q2) - 1e-12


def test_find_cce_deterministic():
    rng = np.random.default_rng(4)
    Q1, Q2 = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    assert find_cce(Q1, Q2).sigma.tobytes() == find_cce(Q1, Q2).sigma.tobytes()


def test_find_cce_rejects_bad_shapes():
    with pytest.raises(ValueError):
        find_cce(np.zeros((2, 3)), np.zeros((2, 3)))


def test_matrix_game_examples():
    v, p, q = matrix_game_value([[1.0, -1.0], [-1.0, 1.0]])
    assert v == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(q, [0.5, 0.5], atol=1e-12)
    assert matrix_game_value([[2.5]])[0] == pytest.approx(2.5)


def test_two_by_two_closed_form():
    # indifference: 3p + 1(1-p) = 0p + 2(1-p)  ->  p = 1/4, value 1.5
    P = np.array([[3.0, 0.0], [1.0, 2.0]])
    (a, b), (c, d) = P
    p = (d - c) / (a - b - c + d)
    v_closed = (a * d - b * c) / (a - b - c + d)
    v, row, col = matrix_game_value(P)
    assert abs(v - 1.5) <= 1e-9 and abs(v - v_closed) <= 1e-12
    np.testing.assert_allclose(row, [p, 1 - p], atol=1e-9)
    np.testing.assert_allclose(row, [0.25, 0.75], atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_saddle_point_and_antisymmetry(m, n, seed):
    P = np.random.default_rng(seed).uniform(-1, 1, size=(m, n))
    v, p, q = matrix_game_value(P)
    assert np.min(p @ P) >= v - 1e-9
    assert np.max(P @ q) <= v + 1e-9
    v2, _, _ = matrix_game_value(-P.T)
    assert v2 == pytest.approx(-v, abs=1e-9)


DEGENERATE_CASES = [
    ([[0.0, 1.625, 0.0], [5.96046448e-08, 0.0, 0.0], [0.0, 0.0, 0.0]],
     [[-1.0, 2.0, 1.0], [1.625, 0.0, 0.0], [0.0, 1.0, 1.0]]),
    ([[0.0, 1.0, 0.0], [5.96046448e-08, 0.0, 0.0], [0.0, 0.0, 0.0]],
     [[-1.0, 2.0, 1.0], [1.625, 0.0, 0.0], [0.0, 1.0, 1.0]]),
    ([[0.0, 1.5, 0.0], [5.96046448e-08, 0.0, 0.0], [0.0, 0.0, 0.0]],
     [[0.375, 1.0, 0.0], [1.0, 1.0, 0.0], [1.0, 1.0, 0.0]]),
]


@pytest.mark.parametrize("Q1,Q2", DEGENERATE_CASES)
def test_tiny_coefficients_with_ties(Q1, Q2):
    Q1, Q2 = np.array(Q1), np.array(Q2)
    sigma = find_cce(Q1, Q2).sigma
    assert cce_violation(sigma, Q1, Q2) <= CCE_TOL


TIE_VALUES = st.sampled_from([-3.0, -1.0, 0.0, 0.0, 0.5, 1.0, 3.0, 1e-7, -2e-9, 6e-8])


@settings(max_examples=150, deadline=None)
@given(st.integers(2, 5).flatmap(lambda n: st.tuples(
    arrays(np.float64, (n, n), elements=TIE_VALUES),
    arrays(np.float64, (n, n), elements=TIE_VALUES))))
def test_tie_heavy_payoffs(pair):
    Q1, Q2 = pair
    sigma = find_cce(Q1, Q2).sigma
    assert cce_violation(sigma, Q1, Q2) <= CCE_TOL
    assert abs(sigma.sum() - 1.0) <= 1e-9


def test_exact_mode_matches_float_on_random_lps():
    from scipy.optimize import linprog
    rng = np.random.default_rng(9)
    for _ in range(20):
        A = rng.uniform(0.1, 2.0, size=(4, 5))
        b = rng.uniform(0.5, 3.0, size=4)
        c = rng.normal(size=5)
        exact = lp_solve(LinearProgram(c=c, A_ub=A, b_ub=b), exact=True)
        ref = linprog(-c, A_ub=A, b_ub=b, method="highs")
        assert exact.info.get("exact") and exact.objective == pytest.approx(-ref.fun, abs=1e-9)
