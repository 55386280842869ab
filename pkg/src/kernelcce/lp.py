"""Small dense two-phase simplex with Bland's anti-cycling rule.

Sized for the problems this package produces (tens of variables). Pivots are
deterministic: the entering variable is the lowest-index improving column and
leaving-row ties go to the lowest basic-variable index.

Floating-point tableaus can lose accuracy on degenerate inputs with tiny
coefficients. ``exact=True`` runs the same pivot sequence on rationals, and the
float path falls back to it when its own answer fails validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

OPTIMAL = "optimal"
FEASIBLE = "feasible"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

PIVOT_TOL = 1e-9
COST_TOL = 1e-11
FEAS_TOL = 1e-9


class LPInternalError(RuntimeError):
    """Raised when the pivot guard trips or the tableau loses feasibility."""


@dataclass
class LinearProgram:
    """``maximize c @ x`` subject to ``A_ub x <= b_ub``, ``A_eq x == b_eq`` and bounds.

    ``bounds`` holds one ``(lo, hi)`` pair per variable; ``None`` means
    unbounded on that side. The default is ``(0, None)`` for every variable.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ub, self.b_ub = _rows(self.A_ub, self.b_ub, n, "ub")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "eq")
        if self.bounds is None:
            self.bounds = [(0.0, None)] * n
        if len(self.bounds) != n:
            raise ValueError("bounds must have one entry per variable")
        for lo, hi in self.bounds:
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"empty bound interval ({lo}, {hi})")

    @property
    def n_vars(self) -> int:
        return self.c.size

    def residual(self, x: np.ndarray) -> float:
        """Largest constraint violation of ``x`` (0 when feasible)."""
        worst = 0.0
        if len(self.b_ub):
            worst = max(worst, float(np.max(self.A_ub @ x - self.b_ub)))
        if len(self.b_eq):
            worst = max(worst, float(np.max(np.abs(self.A_eq @ x - self.b_eq))))
        for xi, (lo, hi) in zip(x, self.bounds):
            if lo is not None:
                worst = max(worst, lo - xi)
            if hi is not None:
                worst = max(worst, xi - hi)
        return worst


def _rows(A, b, n, name):
    if A is None:
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape != (b.size, n):
        raise ValueError(f"A_{name} shape {A.shape} inconsistent with b_{name} ({b.size}) and n={n}")
    return A, b


@dataclass
class LPResult:
    status: str
    x: np.ndarray | None
    objective: float | None
    pivots: int = 0
    info: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status in (OPTIMAL, FEASIBLE)


def _to_standard_form(lp: LinearProgram):
    """Rewrite as ``min cost @ y`` s.t. ``M y = rhs``, ``y >= 0``.

    Also returns the recovery map ``x = offset + T @ y[:n_struct]`` where
    ``n_struct`` counts the non-slack columns.
    """
    n = lp.n_vars
    cols = []  # per original variable: list of (std column, sign)
    offset = np.zeros(n)
    extra_ub = []  # (var index, upper limit on the shifted variable)
    k = 0
    for j, (lo, hi) in enumerate(lp.bounds):
        if lo is not None:
            offset[j] = lo
            cols.append([(k, 1.0)])
            if hi is not None:
                extra_ub.append((k, hi - lo))
            k += 1
        elif hi is not None:
            offset[j] = hi
            cols.append([(k, -1.0)])
            k += 1
        else:
            cols.append([(k, 1.0), (k + 1, -1.0)])
            k += 2
    n_struct = k
    T = np.zeros((n, n_struct))
    for j, entries in enumerate(cols):
        for col, sign in entries:
            T[j, col] = sign

    ub_A = lp.A_ub @ T
    ub_b = lp.b_ub - lp.A_ub @ offset
    if extra_ub:
        rows = np.zeros((len(extra_ub), n_struct))
        for r, (col, lim) in enumerate(extra_ub):
            rows[r, col] = 1.0
        ub_A = np.vstack([ub_A, rows])
        ub_b = np.concatenate([ub_b, [lim for _, lim in extra_ub]])
    eq_A = lp.A_eq @ T
    eq_b = lp.b_eq - lp.A_eq @ offset

    m_ub, m_eq = len(ub_b), len(eq_b)
    M = np.zeros((m_ub + m_eq, n_struct + m_ub))
    M[:m_ub, :n_struct] = ub_A
    M[:m_ub, n_struct:] = np.eye(m_ub)
    M[m_ub:, :n_struct] = eq_A
    rhs = np.concatenate([ub_b, eq_b])
    cost = np.zeros(n_struct + m_ub)
    cost[:n_struct] = -(lp.c @ T)
    return M, rhs, cost, T, offset, n_struct


REFRESH_EVERY = 25


def _to_fractions(a: np.ndarray) -> np.ndarray:
    out = np.empty(a.shape, dtype=object)
    flat = out.reshape(-1)
    for i, v in enumerate(np.asarray(a, dtype=float).reshape(-1)):
        flat[i] = Fraction(v)
    return out


class _Tableau:
    def __init__(self, M, rhs, basis, max_pivots, exact=False):
        self.M = M
        self.rhs = rhs
        self.A = M.copy()
        self.b = rhs.copy()
        self.basis = list(basis)
        self.pivots = 0
        self.max_pivots = max_pivots
        self.exact = exact
        zero = Fraction(0)
        self.piv_tol = zero if exact else PIVOT_TOL
        self.cost_tol = zero if exact else COST_TOL
        self.tie_tol = zero if exact else 1e-12

    def refresh(self):
        """Rebuild the tableau from the original rows for the current basis."""
        if self.exact:
            return
        B = self.M[:, self.basis]
        try:
            self.A = np.linalg.solve(B, self.M)
            self.b = np.linalg.solve(B, self.rhs)
        except np.linalg.LinAlgError as exc:
            raise LPInternalError("singular basis during refresh") from exc
        self.A[:, self.basis] = np.eye(len(self.basis))
        self.b[(self.b < 0) & (self.b > -FEAS_TOL)] = 0.0

    def pivot(self, row, col):
        self.pivots += 1
        if self.pivots > self.max_pivots:
            raise LPInternalError(f"pivot guard tripped after {self.max_pivots} pivots")
        piv = self.A[row, col]
        self.A[row] = self.A[row] / piv
        self.b[row] = self.b[row] / piv
        self.A[row, col] = 1
        for r in range(self.A.shape[0]):
            if r != row:
                f = self.A[r, col]
                if f != 0:
                    self.A[r] = self.A[r] - f * self.A[row]
                    self.b[r] = self.b[r] - f * self.b[row]
                    self.A[r, col] = 0
        if not self.exact:
            self.b[(self.b < 0) & (self.b > -FEAS_TOL)] = 0.0
        self.basis[row] = col
        if self.pivots % REFRESH_EVERY == 0:
            self.refresh()

    def optimize(self, cost, allowed):
        """Bland's-rule primal simplex on ``min cost @ y``; returns False if unbounded."""
        while True:
            cb = cost[self.basis]
            reduced = cost - cb @ self.A
            entering = -1
            for j in np.flatnonzero(allowed):
                if reduced[j] < -self.cost_tol:
                    entering = int(j)
                    break
            if entering < 0:
                self.refresh()
                return True
            column = self.A[:, entering]
            best_row, best_ratio = -1, None
            for r in range(len(self.b)):
                if column[r] > self.piv_tol:
                    ratio = self.b[r] / column[r]
                    if best_ratio is None or ratio < best_ratio - self.tie_tol or (
                            abs(ratio - best_ratio) <= self.tie_tol and self.basis[r] < self.basis[best_row]):
                        best_row, best_ratio = r, ratio
            if best_row < 0:
                return False
            self.pivot(best_row, entering)


def lp_solve(lp: LinearProgram, max_pivots: int = 20000, exact: bool = False) -> LPResult:
    """Solve ``lp`` deterministically.

    The float tableau is tried first unless ``exact`` is set; if it raises an
    internal error the problem is re-solved in rational arithmetic.
    """
    if not exact:
        try:
            return _solve(lp, max_pivots, False)
        except LPInternalError:
            pass
    res = _solve(lp, max_pivots, True)
    res.info["exact"] = True
    return res


def _solve(lp: LinearProgram, max_pivots: int, exact: bool) -> LPResult:
    M, rhs, cost, T, offset, n_struct = _to_standard_form(lp)
    m, n_std = M.shape
    neg = rhs < 0
    M[neg] *= -1.0
    rhs = np.abs(rhs)

    n_ub_rows = n_std - n_struct
    basis = []
    art_rows = []
    for r in range(m):
        slack = n_struct + r if r < n_ub_rows else None
        if slack is not None and not neg[r]:
            basis.append(slack)
        else:
            basis.append(-1)
            art_rows.append(r)
    n_art = len(art_rows)
    A = np.hstack([M, np.zeros((m, n_art))])
    for i, r in enumerate(art_rows):
        A[r, n_std + i] = 1.0
        basis[r] = n_std + i
    phase1 = np.zeros(n_std + n_art)
    phase1[n_std:] = 1.0
    if exact:
        A, M, rhs, cost, phase1 = (_to_fractions(v) for v in (A, M, rhs, cost, phase1))
    tab = _Tableau(A, rhs, basis, max_pivots, exact)

    if n_art:
        tab.optimize(phase1, np.ones(n_std + n_art, dtype=bool))
        infeas = float(tab.b[[r for r, j in enumerate(tab.basis) if j >= n_std]].sum()) \
            if any(j >= n_std for j in tab.basis) else 0.0
        if infeas > (0.0 if exact else FEAS_TOL):
            return LPResult(INFEASIBLE, None, None, tab.pivots)
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = []
        for r in range(m):
            if tab.basis[r] >= n_std:
                mags = np.abs(tab.A[r, :n_std])
                if mags.max() > (0 if exact else 1e-9):
                    tab.pivot(r, int(mags.argmax()))
                    keep.append(r)
            else:
                keep.append(r)
        tab.A = tab.A[keep][:, :n_std]
        tab.b = tab.b[keep]
        tab.basis = [tab.basis[r] for r in keep]
        tab.M = M[keep]
        tab.rhs = rhs[keep]
        tab.refresh()

    if not tab.optimize(cost, np.ones(n_std, dtype=bool)):
        return LPResult(UNBOUNDED, None, None, tab.pivots)

    y = np.zeros(n_std)
    y[tab.basis] = np.array([float(v) for v in tab.b])
    x = offset + T @ y[:n_struct]
    objective = float(lp.c @ x)
    resid = lp.residual(x)
    if resid > 1e-7:
        raise LPInternalError(f"simplex returned a point violating constraints by {resid:.3e}")
    status = FEASIBLE if not np.any(lp.c) else OPTIMAL
    return LPResult(status, x, objective, tab.pivots, {"residual": resid})
