"""Weighted kernels, Gram-matrix ridge regression state, bonus widths and confidence radii.

``GramState`` keeps the Cholesky factor ``L`` of ``K + lam*I`` implicitly through
three quantities updated by bordering on every append:

* ``W = L^{-1} Psi`` where ``Psi`` stacks the normalized features, so the
  kernel vector of a query ``q`` maps to ``L^{-1} k(q) = W q``;
* ``u = L^{-1} y`` for the normalized targets;
* the squared pivots ``lam * (1 + w_i^2)``, where ``w_i`` is the width of
  sample ``i`` against the data before it.

Then ``k(q)^T (K + lam I)^{-1} y = (W q) . u`` and the width bracket is
``q.q - |W q|^2``. A full refactorization (with jitter escalation) is used when
``lam`` changes or a bordered pivot is not positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

HOEFFDING = "hoeffding"
BERNSTEIN = "bernstein"
MISSPECIFIED = "misspecified"
VARIANTS = (HOEFFDING, BERNSTEIN, MISSPECIFIED)

JITTER_START = 1e-12
JITTER_MAX = 1e-6


class GramFactorizationError(RuntimeError):
    pass


def phi_V(game, z, V) -> np.ndarray:
    """``sum_{s'} phi(s'|z) V(s')`` for a single tuple ``z = (x, a, b)``."""
    V = np.asarray(V, dtype=float)
    if V.shape != (game.n_states,):
        raise ValueError(f"value table must have shape ({game.n_states},), got {V.shape}")
    x, a, b = z
    return game.features[x, a, b].T @ V


def phi_V_all(game, V) -> np.ndarray:
    """Aggregated features for every tuple at once, shape ``(S, A, A, d)``."""
    V = np.asarray(V, dtype=float)
    if V.shape != (game.n_states,):
        raise ValueError(f"value table must have shape ({game.n_states},), got {V.shape}")
    return np.einsum("xabsi,s->xabi", game.features, V)


def weighted_kernel(game, V1, V2, z1, z2) -> float:
    """``sum_{s1, s2} V1(s1) V2(s2) <phi(s1|z1), phi(s2|z2)>``."""
    f1 = game.features[tuple(z1)]
    f2 = game.features[tuple(z2)]
    return float(np.asarray(V1) @ (f1 @ f2.T) @ np.asarray(V2))


def _cholesky_with_jitter(K: np.ndarray, lam: float):
    n = K.shape[0]
    jitter = 0.0
    while True:
        try:
            return np.linalg.cholesky(K + (lam + jitter) * np.eye(n)), jitter
        except np.linalg.LinAlgError:
            jitter = JITTER_START if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * (1 + 1e-9):
                raise GramFactorizationError(
                    f"Gram matrix not factorizable with jitter up to {JITTER_MAX}") from None


class GramState:
    """Growing ridge-regression memory for one (player, step) stream."""

    def __init__(self, dim: int, lam: float, normalizer_floor: float = 0.0, capacity: int = 64):
        if lam <= 0:
            raise ValueError("lam must be positive")
        self.dim = int(dim)
        self.lam = float(lam)
        self.normalizer_floor = float(normalizer_floor)
        self.t = 0
        self.jitter = 0.0
        self.clip_count = 0
        self._alloc(capacity)
        self.cov = np.zeros((self.dim, self.dim))
        self._chol = None

    def _alloc(self, cap):
        d = self.dim
        self._features = np.zeros((cap, d))
        self._targets = np.zeros(cap)
        self._normalizers = np.zeros(cap)
        self._psi = np.zeros((cap, d))
        self._y = np.zeros(cap)
        self._W = np.zeros((cap, d))
        self._u = np.zeros(cap)
        self._w2 = np.zeros(cap)

    def _grow(self):
        old = (self._features, self._targets, self._normalizers, self._psi, self._y,
               self._W, self._u, self._w2)
        self._alloc(2 * len(self._targets))
        new = (self._features, self._targets, self._normalizers, self._psi, self._y,
               self._W, self._u, self._w2)
        for src, dst in zip(old, new):
            dst[: self.t] = src[: self.t]

    def __len__(self):
        return self.t

    @property
    def features(self) -> np.ndarray:
        return self._features[: self.t]

    @property
    def targets(self) -> np.ndarray:
        return self._targets[: self.t]

    @property
    def normalizers(self) -> np.ndarray:
        return self._normalizers[: self.t]

    @property
    def psi(self) -> np.ndarray:
        """Normalized features, one row per sample."""
        return self._psi[: self.t]

    @property
    def y(self) -> np.ndarray:
        """Normalized targets."""
        return self._y[: self.t]

    @property
    def gram(self) -> np.ndarray:
        return self.psi @ self.psi.T

    @property
    def sample_widths_sq(self) -> np.ndarray:
        """Squared width of each sample against the samples before it."""
        return self._w2[: self.t]

    @property
    def potential(self) -> float:
        return float(np.minimum(1.0, self.sample_widths_sq).sum())

    def append(self, feature, target: float, normalizer: float = 1.0) -> None:
        feature = np.asarray(feature, dtype=float)
        if feature.shape != (self.dim,):
            raise ValueError(f"feature must have shape ({self.dim},)")
        if not (np.all(np.isfinite(feature)) and math.isfinite(target) and math.isfinite(normalizer)):
            raise ValueError("non-finite observation")
        if normalizer < self.normalizer_floor or normalizer <= 0:
            raise ValueError(f"normalizer {normalizer} below floor {self.normalizer_floor}")
        if self.t == len(self._targets):
            self._grow()
        t = self.t
        f = feature / normalizer
        yn = target / normalizer
        lam_eff = self.lam + self.jitter
        l = self._W[:t] @ f
        pivot_sq = lam_eff + f @ f - l @ l
        self._features[t] = feature
        self._targets[t] = target
        self._normalizers[t] = normalizer
        self._psi[t] = f
        self._y[t] = yn
        self.cov += np.outer(f, f)
        self.t += 1
        self._chol = None
        if pivot_sq <= 0.5 * lam_eff:
            # bordered pivot lost accuracy; in exact arithmetic it is >= lam
            self._refactor()
            return
        pivot = math.sqrt(pivot_sq)
        self._W[t] = (f - l @ self._W[:t]) / pivot
        self._u[t] = (yn - l @ self._u[:t]) / pivot
        self._w2[t] = max(pivot_sq / lam_eff - 1.0, 0.0)

    def set_lambda(self, lam: float) -> None:
        if lam <= 0:
            raise ValueError("lam must be positive")
        if lam == self.lam:
            return
        self.lam = float(lam)
        self.jitter = 0.0
        self._refactor()

    def _refactor(self):
        t = self.t
        self._chol = None
        if t == 0:
            return
        L, jitter = _cholesky_with_jitter(self.gram, self.lam + self.jitter)
        self.jitter += jitter
        lam_eff = self.lam + self.jitter
        self._W[:t] = solve_triangular(L, self.psi, lower=True)
        self._u[:t] = solve_triangular(L, self.y, lower=True)
        self._w2[:t] = np.maximum(np.diag(L) ** 2 / lam_eff - 1.0, 0.0)

    def _cholesky(self):
        if self._chol is None:
            self._chol, _ = _cholesky_with_jitter(self.gram, self.lam + self.jitter)
        return self._chol

    @property
    def dual_weights(self) -> np.ndarray:
        """``(K + lam I)^{-1} y`` from a fresh factorization of the Gram matrix."""
        if self.t == 0:
            return np.zeros(0)
        return cho_solve((self._cholesky(), True), self.y)

    def kernel_vector(self, query) -> np.ndarray:
        """``k(q)[p] = <feature_p, q> / normalizer_p``."""
        return self.psi @ np.asarray(query, dtype=float)

    def mean_estimate(self, query) -> float:
        """Ridge prediction ``k(q)^T (K + lam I)^{-1} y`` through the dual form."""
        if self.t == 0:
            return 0.0
        return float(self.kernel_vector(query) @ self.dual_weights)

    def bonus_width(self, query) -> float:
        """``lam^{-1/2} [k(q,q) - k(q)^T (K + lam I)^{-1} k(q)]^{1/2}``, bracket clipped at 0."""
        q = np.asarray(query, dtype=float)
        kqq = float(q @ q)
        if self.t == 0:
            return math.sqrt(kqq / self.lam)
        v = solve_triangular(self._cholesky(), self.kernel_vector(q), lower=True)
        bracket = kqq - float(v @ v)
        if bracket < 0:
            self.clip_count += 1
            bracket = 0.0
        return math.sqrt(bracket / (self.lam + self.jitter))

    def predict(self, queries: np.ndarray):
        """Means and widths for a batch of queries (rows), using the bordered factor."""
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        kqq = np.einsum("ij,ij->i", Q, Q)
        lam_eff = self.lam + self.jitter
        if self.t == 0:
            return np.zeros(len(Q)), np.sqrt(kqq / lam_eff)
        V = Q @ self._W[: self.t].T
        means = V @ self._u[: self.t]
        bracket = kqq - np.einsum("ij,ij->i", V, V)
        neg = bracket < 0
        self.clip_count += int(neg.sum())
        bracket[neg] = 0.0
        return means, np.sqrt(bracket / lam_eff)

    def information_gain(self, lam: float | None = None) -> float:
        """``0.5 * logdet(I + K / lam)``; defaults to the state's own ``lam``."""
        if self.t == 0:
            return 0.0
        if lam is None:
            return float(0.5 * np.log1p(self.sample_widths_sq).sum())
        # nonzero spectra of K = Psi Psi^T and Psi^T Psi coincide
        mat = self.gram if self.t <= self.dim else self.cov
        eig = np.clip(np.linalg.eigvalsh(mat), 0.0, None)
        return float(0.5 * np.log1p(eig / lam).sum())

    def logdet_independent(self) -> float:
        """``logdet(I + K / lam)`` from an eigendecomposition, for post hoc checks."""
        if self.t == 0:
            return 0.0
        mat = self.gram if self.t <= self.dim else self.cov
        eig = np.clip(np.linalg.eigvalsh(mat), 0.0, None)
        return float(np.log1p(eig / (self.lam + self.jitter)).sum())


@dataclass
class BonusParams:
    lam: float
    norm_bound: float
    horizon: int
    delta: float
    variant: str = HOEFFDING
    iota: float = 0.0
    beta_scale: float = 1.0
    lam1: float | None = None
    lam2: float | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.lam <= 0 or self.beta_scale <= 0:
            raise ValueError("lam and beta_scale must be positive")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.iota < 0:
            raise ValueError("iota must be nonnegative")
        for name in ("lam1", "lam2", "alpha"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be positive")


def beta_hoeffding(params: BonusParams, gamma_hat: float) -> float:
    H, B = params.horizon, params.norm_bound
    inner = 2.0 * gamma_hat + 2.0 + 4.0 * math.log(1.0 / params.delta) + 2.0 * params.lam * (B / H) ** 2
    return params.beta_scale * H * math.sqrt(inner)


def beta_misspecified(params: BonusParams, gamma_hat: float, t: int) -> float:
    if t < 1:
        raise ValueError("episode index must be >= 1")
    H, B = params.horizon, params.norm_bound
    inner = (2.0 * gamma_hat + 3.0 + 6.0 * math.log(1.0 / params.delta)
             + 3.0 * params.lam * (B / H) ** 2 + 3.0 * params.iota ** 2 * t)
    return params.beta_scale * H * math.sqrt(inner)


def bernstein_defaults(norm_bound: float, horizon: int, d_eff: float):
    """``(lam0, lam1, lam2, alpha)`` with ``d_eff`` floored at 1."""
    d_eff = max(float(d_eff), 1.0)
    B, H = norm_bound, horizon
    return 1.0 / B ** 2, d_eff / (B ** 2 * H ** 2), H ** 2 / B ** 2, H / math.sqrt(d_eff)


def beta_bernstein_schedules(params: BonusParams, gamma_first: float, gamma_second: float, t: int):
    """``(beta_t, beta1_t, beta2_t)`` for the variance-weighted variant.

    ``gamma_first`` is the information gain of the weighted first-moment data
    at ``lam1 * alpha**2``, ``gamma_second`` that of the second-moment data at
    ``lam2 / H**2``.
    """
    if t < 1:
        raise ValueError("episode index must be >= 1")
    H, B, alpha = params.horizon, params.norm_bound, params.alpha
    log_term = math.log(4.0 * t * t * H / params.delta)
    root_log = math.sqrt(log_term)
    bias1 = math.sqrt(params.lam1) * B
    beta1 = (16.0 * H / alpha) * math.sqrt(gamma_first) * root_log + (8.0 * H / alpha) * log_term + bias1
    beta2 = (16.0 * H ** 2 * math.sqrt(gamma_second) * root_log + 8.0 * H ** 2 * log_term
             + math.sqrt(params.lam2) * B)
    beta = 16.0 * math.sqrt(gamma_first) * root_log + (8.0 * H / alpha) * log_term + bias1
    s = params.beta_scale
    return s * beta, s * beta1, s * beta2


def variance_estimate(first: GramState, second: GramState, phi_v, phi_v_sq,
                      beta1: float, beta2: float, alpha: float, horizon: int):
    """Variance upper bound ``(R^2, E)`` for the next-step value at one tuple.

    ``first`` regresses (weighted) values on ``phi_v``, ``second`` regresses
    squared values on ``phi_v_sq``.
    """
    H = horizon
    (m2,), (w2,) = second.predict(phi_v_sq)
    (m1,), (w1,) = first.predict(phi_v)
    second_moment = min(max(m2, 0.0), H * H)
    first_moment = min(max(m1, -H), H)
    v_est = second_moment - first_moment ** 2
    err = min(H * H, beta2 * w2) + min(H * H, 2.0 * H * beta1 * w1)
    return max(v_est + err, alpha ** 2), err
