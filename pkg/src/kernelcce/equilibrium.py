"""Coarse correlated equilibria and zero-sum matrix games via the dense simplex."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import LinearProgram, LPInternalError, lp_solve

CCE_TOL = 1e-8


class CCEError(RuntimeError):
    def __init__(self, message, Q1=None, Q2=None):
        super().__init__(message)
        self.Q1 = Q1
        self.Q2 = Q2


@dataclass
class JointDistribution:
    """Probability table ``sigma[a, b]`` over (max action, min action) pairs."""

    sigma: np.ndarray
    pivots: int = 0
    row_marginal: np.ndarray = field(init=False)
    col_marginal: np.ndarray = field(init=False)

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.row_marginal = self.sigma.sum(axis=1)
        self.col_marginal = self.sigma.sum(axis=0)

    def expect(self, payoff: np.ndarray) -> float:
        return float(np.sum(self.sigma * payoff))


def cce_violation(sigma: np.ndarray, Q1: np.ndarray, Q2: np.ndarray) -> float:
    """Largest violation of the two CCE deviation families at ``sigma``.

    Max player: ``E_sigma[Q1] >= E_{b~col}[Q1(a', b)]`` for every ``a'``.
    Min player: ``E_sigma[Q2] <= E_{a~row}[Q2(a, b')]`` for every ``b'``.
    """
    row = sigma.sum(axis=1)
    col = sigma.sum(axis=0)
    gain_max = np.max(Q1 @ col) - np.sum(sigma * Q1)
    gain_min = np.sum(sigma * Q2) - np.min(row @ Q2)
    return float(max(gain_max, gain_min, 0.0))


def cce_program(Q1: np.ndarray, Q2: np.ndarray, maximize_gap: bool = False) -> LinearProgram:
    Q1 = np.asarray(Q1, dtype=float)
    Q2 = np.asarray(Q2, dtype=float)
    n = Q1.shape[0]
    if Q1.shape != (n, n) or Q2.shape != (n, n):
        raise ValueError("payoff matrices must be square and of equal size")
    rows = []
    for m in range(n):
        # sum_ij sigma_ij (Q1[m, j] - Q1[i, j]) <= 0
        rows.append((Q1[m][None, :] - Q1).ravel())
    for k in range(n):
        # sum_ij sigma_ij (Q2[i, j] - Q2[i, k]) <= 0
        rows.append((Q2 - Q2[:, k][:, None]).ravel())
    c = (Q1 - Q2).ravel() if maximize_gap else np.zeros(n * n)
    return LinearProgram(
        c=c,
        A_ub=np.array(rows),
        b_ub=np.zeros(2 * n),
        A_eq=np.ones((1, n * n)),
        b_eq=[1.0],
    )


def find_cce(Q1: np.ndarray, Q2: np.ndarray, maximize_gap: bool = False) -> JointDistribution:
    """Joint distribution satisfying both CCE families for payoffs ``(Q1, Q2)``.

    ``Q1`` is the optimistic payoff the max player deviates against, ``Q2`` the
    pessimistic payoff for the min player. By default the program has a zero
    objective and the first feasible vertex reached is returned.
    """
    lp = cce_program(Q1, Q2, maximize_gap)
    n = lp.A_ub.shape[1]
    side = int(round(np.sqrt(n)))
    Q1f, Q2f = np.asarray(Q1, float), np.asarray(Q2, float)
    sigma, viol, res = None, np.inf, None
    # a float answer that fails validation is redone in rational arithmetic
    for exact in (False, True):
        try:
            res = lp_solve(lp, exact=exact)
        except LPInternalError as exc:
            raise CCEError(f"simplex failure: {exc}", Q1, Q2) from exc
        if not res.success:
            continue
        sigma = np.clip(res.x, 0.0, None).reshape(side, side)
        sigma /= sigma.sum()
        viol = cce_violation(sigma, Q1f, Q2f)
        if viol <= CCE_TOL:
            break
    if sigma is None:
        raise CCEError(f"CCE program reported {res.status}", Q1, Q2)
    if viol > CCE_TOL:
        raise CCEError(f"CCE output violates constraints by {viol:.3e}", Q1, Q2)
    return JointDistribution(sigma, pivots=res.pivots)


def matrix_game_value(P: np.ndarray):
    """Minimax value and optimal strategies of the zero-sum game with row payoff ``P``.

    Returns ``(value, row_strategy, col_strategy)``; the row player maximizes.
    """
    P = np.asarray(P, dtype=float)
    m, n = P.shape
    free = [(None, None)]
    # row player: max v  s.t.  v - (P^T p)_j <= 0,  sum p = 1
    row_lp = LinearProgram(
        c=np.r_[np.zeros(m), 1.0],
        A_ub=np.hstack([-P.T, np.ones((n, 1))]),
        b_ub=np.zeros(n),
        A_eq=np.r_[np.ones(m), 0.0][None, :],
        b_eq=[1.0],
        bounds=[(0.0, None)] * m + free,
    )
    # column player: min w  s.t.  (P q)_i - w <= 0,  sum q = 1
    col_lp = LinearProgram(
        c=np.r_[np.zeros(n), -1.0],
        A_ub=np.hstack([P, -np.ones((m, 1))]),
        b_ub=np.zeros(m),
        A_eq=np.r_[np.ones(n), 0.0][None, :],
        b_eq=[1.0],
        bounds=[(0.0, None)] * n + free,
    )
    r1, r2 = lp_solve(row_lp), lp_solve(col_lp)
    if not (r1.success and r2.success):
        raise LPInternalError(f"matrix game LP failed: {r1.status}/{r2.status}")
    p = np.clip(r1.x[:m], 0.0, None)
    q = np.clip(r2.x[:n], 0.0, None)
    p /= p.sum()
    q /= q.sum()
    return float(r1.x[-1]), p, q
