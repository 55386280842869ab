import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from kernelcce.lp import INFEASIBLE, OPTIMAL, UNBOUNDED, FEASIBLE, LinearProgram, lp_solve


def vertex_enumeration_max(c, A, b):
    """Brute-force optimum of max c@x, A x <= b, x >= 0 over basic solutions."""
    n = len(c)
    G = np.vstack([A, -np.eye(n)])
    h = np.r_[b, np.zeros(n)]
    best = -np.inf
    for idx in itertools.combinations(range(len(G)), n):
        M = G[list(idx)]
        if abs(np.linalg.det(M)) < 1e-12:
            continue
        x = np.linalg.solve(M, h[list(idx)])
        if np.all(G @ x <= h + 1e-9):
            best = max(best, c @ x)
    return best


def test_small_lps_match_vertex_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(150):
        n, m = rng.integers(1, 4), rng.integers(1, 5)
        A = rng.uniform(0.1, 2.0, size=(m, n))  # positive rows keep the region bounded
        b = rng.uniform(0.5, 3.0, size=m)
        c = rng.normal(size=n)
        res = lp_solve(LinearProgram(c=c, A_ub=A, b_ub=b))
        assert res.status == OPTIMAL
        assert res.objective == pytest.approx(vertex_enumeration_max(c, A, b), abs=1e-9)
        assert np.all(A @ res.x <= b + 1e-9) and np.all(res.x >= -1e-12)


def test_mixed_constraints_match_scipy():
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(2, 7))
        A_ub = rng.normal(size=(int(rng.integers(1, 6)), n))
        x0 = rng.uniform(0, 1, size=n)
        b_ub = A_ub @ x0 + rng.uniform(0, 1, size=len(A_ub))
        A_eq = rng.normal(size=(1, n))
        b_eq = A_eq @ x0
        bounds = [(0.0, 2.0)] * (n - 1) + [(None, None)]
        c = rng.normal(size=n)
        ref = linprog(-c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        res = lp_solve(LinearProgram(c=c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds))
        if ref.status == 3:
            assert res.status == UNBOUNDED
            continue
        assert ref.status == 0
        assert res.status == OPTIMAL
        assert res.objective == pytest.approx(-ref.fun, abs=1e-8)


def test_beale_cycling_example_terminates():
    # classic degenerate instance where Dantzig's rule with naive ties cycles
    c = np.array([0.75, -20.0, 0.5, -6.0])
    A = np.array([[0.25, -8.0, -1.0, 9.0],
                  [0.5, -12.0, -0.5, 3.0],
                  [0.0, 0.0, 1.0, 0.0]])
    b = np.array([0.0, 0.0, 1.0])
    res = lp_solve(LinearProgram(c=c, A_ub=A, b_ub=b))
    ref = linprog(-c, A_ub=A, b_ub=b, method="highs")
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-ref.fun, abs=1e-12)
    assert res.objective == pytest.approx(1.25)


def test_infeasible_detected():
    lp = LinearProgram(c=[1.0, 1.0], A_ub=[[1.0, 1.0]], b_ub=[1.0], A_eq=[[1.0, 1.0]], b_eq=[2.0])
    assert lp_solve(lp).status == INFEASIBLE


def test_unbounded_detected():
    lp = LinearProgram(c=[1.0, 0.0], A_ub=[[-1.0, 1.0]], b_ub=[1.0])
    assert lp_solve(lp).status == UNBOUNDED


def test_zero_objective_reports_feasible():
    lp = LinearProgram(c=[0.0, 0.0], A_eq=[[1.0, 1.0]], b_eq=[1.0])
    res = lp_solve(lp)
    assert res.status == FEASIBLE and res.success
    assert res.x.sum() == pytest.approx(1.0)


def test_redundant_equalities_are_dropped():
    lp = LinearProgram(c=[1.0, 2.0], A_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[1.0, 2.0])
    res = lp_solve(lp)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(2.0)


def test_negative_lower_bound_and_free_variable():
    # max -|y| style: max x - y with x in [-3, -1], y free, y >= x - 0.5 and y >= -x - 10
    lp = LinearProgram(c=[1.0, -1.0], A_ub=[[1.0, -1.0], [-1.0, -1.0]], b_ub=[0.5, 10.0],
                       bounds=[(-3.0, -1.0), (None, None)])
    res = lp_solve(lp)
    ref = linprog([-1.0, 1.0], A_ub=[[1.0, -1.0], [-1.0, -1.0]], b_ub=[0.5, 10.0],
                  bounds=[(-3.0, -1.0), (None, None)], method="highs")
    assert res.objective == pytest.approx(-ref.fun, abs=1e-10)


def test_solver_is_deterministic():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(6, 8))
    lp = LinearProgram(c=rng.normal(size=8), A_ub=A, b_ub=np.abs(rng.normal(size=6)),
                       bounds=[(0.0, 1.0)] * 8)
    r1, r2 = lp_solve(lp), lp_solve(lp)
    assert r1.x.tobytes() == r2.x.tobytes()
    assert r1.pivots == r2.pivots


def test_shape_validation():
    with pytest.raises(ValueError):
        LinearProgram(c=[1.0, 2.0], A_ub=[[1.0]], b_ub=[1.0])
