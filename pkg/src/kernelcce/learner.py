"""Optimistic/pessimistic value-targeted kernel regression with CCE planning.

One learner instance plays both sides of a two-player zero-sum game. Each
episode it plans backwards over the whole finite grid, builds upper and lower
action-value tables, solves a coarse correlated equilibrium per state, plays the
joint policy for one episode and feeds the observed transitions back into its
per-step regression models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .equilibrium import CCEError, find_cce
from .game import MAX, MIN, KernelMixtureGame, Trajectory, best_response_value, sample_index, \
    sample_next_state
from .kernels import (BERNSTEIN, HOEFFDING, MISSPECIFIED, VARIANTS, BonusParams, GramState,
                      bernstein_defaults, beta_bernstein_schedules, beta_hoeffding,
                      beta_misspecified, phi_V, phi_V_all, variance_estimate)

OVER = "over"
UNDER = "under"


class PlanningError(RuntimeError):
    pass


@dataclass
class RunConfig:
    episodes: int
    variant: str = HOEFFDING
    delta: float = 0.05
    beta_scale: float = 1.0
    # fixed information-gain value used in every confidence radius; None = adaptive
    gamma_hat: float | None = None
    # misspecification level the misspecified radius is enlarged for
    iota: float = 0.0
    # ridge parameter for the unweighted variants; None = 1 + 1/T
    lam: float | None = None

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.beta_scale <= 0:
            raise ValueError("beta_scale must be positive")
        if self.gamma_hat is not None and self.gamma_hat < 0:
            raise ValueError("gamma_hat must be nonnegative")


@dataclass
class EpisodeRow:
    episode: int
    duality_gap: float
    cum_regret: float
    vbar1: float
    vlow1: float
    beta_t: float
    info_gain_mean: float
    clip_count: int
    v_best_max: float
    v_best_min: float
    lp_pivots: int


@dataclass
class RegretRecord:
    rows: list = field(default_factory=list)
    t0: int | None = None
    t0_gap: float | None = None
    info_gains: list = field(default_factory=list)
    variance_checks: list = field(default_factory=list)
    model_stats: list = field(default_factory=list)

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def optimism_flags(self, tol: float = 1e-6) -> np.ndarray:
        """True where the episode's upper/lower estimates bracketed the best responses."""
        vbar, vlow = self.column("vbar1"), self.column("vlow1")
        return (vbar >= self.column("v_best_max") - tol) & (vlow <= self.column("v_best_min") + tol)


class KernelCCELearner:
    def __init__(self, game: KernelMixtureGame, config: RunConfig):
        self.game = game
        self.config = config
        self.variant = config.variant
        H, S, A, d = game.horizon, game.n_states, game.n_actions, game.feature_dim
        self.H, self.S, self.A, self.d = H, S, A, d
        B = game.norm_bound
        self.t = 0
        if self.variant == BERNSTEIN:
            lam0, lam1, lam2, alpha = bernstein_defaults(B, H, 1.0)
            self.lam0 = lam0
            self.params = BonusParams(lam=lam0, norm_bound=B, horizon=H, delta=config.delta,
                                      variant=BERNSTEIN, beta_scale=config.beta_scale,
                                      lam1=lam1, lam2=lam2, alpha=alpha)
            self.models = {OVER: [GramState(d, lam1) for _ in range(H)],
                           UNDER: [GramState(d, lam1) for _ in range(H)]}
            self.second = {OVER: [GramState(d, lam2) for _ in range(H)],
                           UNDER: [GramState(d, lam2) for _ in range(H)]}
        else:
            lam = config.lam if config.lam is not None else 1.0 + 1.0 / max(config.episodes, 1)
            self.params = BonusParams(lam=lam, norm_bound=B, horizon=H, delta=config.delta,
                                      variant=self.variant, iota=config.iota,
                                      beta_scale=config.beta_scale)
            self.models = {OVER: [GramState(d, lam, normalizer_floor=1.0) for _ in range(H)],
                           UNDER: [GramState(d, lam, normalizer_floor=1.0) for _ in range(H)]}
            self.second = None
        self.Qbar = np.zeros((H, S, A, A))
        self.Qlow = np.zeros((H, S, A, A))
        self.sigma = np.zeros((H, S, A, A))
        self.Vbar = np.zeros((H + 1, S))
        self.Vlow = np.zeros((H + 1, S))
        self.beta_t = self.beta1_t = self.beta2_t = 0.0
        self.lp_pivots = 0
        self.clip_count = 0

    def all_states(self):
        for role in (OVER, UNDER):
            for h, s in enumerate(self.models[role]):
                yield f"{role}/{h}", s
            if self.second is not None:
                for h, s in enumerate(self.second[role]):
                    yield f"{role}-second/{h}", s

    def info_gains(self) -> list[float]:
        return [s.information_gain() for _, s in self.all_states()]

    def _refresh_radii(self, t: int):
        p = self.params
        fixed = self.config.gamma_hat
        first_states = self.models[OVER] + self.models[UNDER]
        if self.variant == BERNSTEIN:
            if fixed is None:
                d_eff = max(s.information_gain(self.lam0) for s in first_states)
            else:
                d_eff = fixed
            _, lam1, lam2, alpha = bernstein_defaults(p.norm_bound, p.horizon, d_eff)
            p.lam1, p.lam2, p.alpha = lam1, lam2, alpha
            for s in first_states:
                s.set_lambda(lam1)
            if fixed is None:
                g1 = max(s.information_gain(lam1 * alpha ** 2) for s in first_states)
                second_states = self.second[OVER] + self.second[UNDER]
                g2 = max(s.information_gain(lam2 / p.horizon ** 2) for s in second_states)
            else:
                g1 = g2 = fixed
            self.beta_t, self.beta1_t, self.beta2_t = beta_bernstein_schedules(p, g1, g2, t)
            return
        gamma = fixed if fixed is not None else max(s.information_gain() for s in first_states)
        if self.variant == MISSPECIFIED:
            self.beta_t = beta_misspecified(p, gamma, t)
        else:
            self.beta_t = beta_hoeffding(p, gamma)

    def plan_episode(self):
        """Backward pass producing the clipped Q tables, per-state CCEs and values."""
        game, H, d = self.game, self.H, self.d
        t = self.t + 1
        self._refresh_radii(t)
        beta = self.beta_t
        self.Vbar[H] = 0.0
        self.Vlow[H] = 0.0
        clips_before = sum(s.clip_count for _, s in self.all_states())
        pivots = 0
        for h in range(H - 1, -1, -1):
            feats_over = phi_V_all(game, self.Vbar[h + 1]).reshape(-1, d)
            feats_under = phi_V_all(game, self.Vlow[h + 1]).reshape(-1, d)
            mean_o, width_o = self.models[OVER][h].predict(feats_over)
            mean_u, width_u = self.models[UNDER][h].predict(feats_under)
            r = game.reward[h]
            self.Qbar[h] = np.clip(r + (mean_o + beta * width_o).reshape(r.shape), -H, H)
            self.Qlow[h] = np.clip(r + (mean_u - beta * width_u).reshape(r.shape), -H, H)
            for x in range(self.S):
                try:
                    joint = find_cce(self.Qbar[h, x], self.Qlow[h, x])
                except CCEError as exc:
                    raise PlanningError(f"episode {t}, step {h}, state {x}: {exc}\n"
                                        f"Qbar={exc.Q1!r}\nQlow={exc.Q2!r}") from exc
                pivots += joint.pivots
                self.sigma[h, x] = joint.sigma
                self.Vbar[h, x] = joint.expect(self.Qbar[h, x])
                self.Vlow[h, x] = joint.expect(self.Qlow[h, x])
        self.lp_pivots = pivots
        self.clip_count = sum(s.clip_count for _, s in self.all_states()) - clips_before

    def extract_policies(self):
        """Row and column marginals of the planned joint policies, shape ``(H, S, A)`` each."""
        return self.sigma.sum(axis=3), self.sigma.sum(axis=2)

    def execute_episode(self, game: KernelMixtureGame, rng: np.random.Generator) -> Trajectory:
        H, A = self.H, self.A
        states = np.zeros(H + 1, dtype=int)
        a_max = np.zeros(H, dtype=int)
        a_min = np.zeros(H, dtype=int)
        rewards = np.zeros(H)
        x = game.initial_state
        states[0] = x
        for h in range(H):
            a, b = divmod(sample_index(rng, self.sigma[h, x].ravel()), A)
            a_max[h], a_min[h] = a, b
            rewards[h] = game.reward[h, x, a, b]
            x = sample_next_state(rng, game, h, (x, a, b))
            states[h + 1] = x
        return Trajectory(self.t + 1, states, a_max, a_min, rewards)

    def update_models(self, trajectory: Trajectory):
        """Append this episode's regression samples; returns ``(h, role, R^2)`` per Bernstein sample."""
        game, H = self.game, self.H
        out = []
        for h, (x, a, b, _, x_next) in enumerate(trajectory.steps()):
            z = (x, a, b)
            for role, V in ((OVER, self.Vbar[h + 1]), (UNDER, self.Vlow[h + 1])):
                feat = phi_V(game, z, V)
                target = float(V[x_next])
                if not math.isfinite(target):
                    raise ValueError(f"non-finite regression target at step {h}")
                if self.variant == BERNSTEIN:
                    first, second = self.models[role][h], self.second[role][h]
                    feat_sq = phi_V(game, z, V ** 2)
                    p = self.params
                    r2, _ = variance_estimate(first, second, feat, feat_sq,
                                              self.beta1_t, self.beta2_t, p.alpha, H)
                    first.normalizer_floor = p.alpha
                    first.append(feat, target, math.sqrt(r2))
                    second.append(feat_sq, target * target)
                    out.append((h, role, r2))
                else:
                    self.models[role][h].append(feat, target)
        self.t += 1
        return out


def select_t0(record: RegretRecord) -> int:
    """Episode (1-based) minimizing the planned upper-lower gap at the initial state."""
    if not record.rows:
        raise ValueError("cannot select t0 from an empty record")
    gaps = record.column("vbar1") - record.column("vlow1")
    return int(np.argmin(gaps)) + 1


def conditional_variance(game: KernelMixtureGame, h: int, z, V: np.ndarray) -> float:
    p = game.transitions[h][tuple(z)]
    mean = p @ V
    return float(p @ (V * V) - mean * mean)


def run(game: KernelMixtureGame, config: RunConfig, rng: np.random.Generator,
        on_episode=None) -> RegretRecord:
    """Play ``config.episodes`` episodes and log the exact duality gap of every plan.

    ``on_episode(row)`` is called after each episode so callers can stream rows.
    """
    learner = KernelCCELearner(game, config)
    record = RegretRecord()
    x1 = game.initial_state
    cum = 0.0
    for t in range(1, config.episodes + 1):
        learner.plan_episode()
        pi, nu = learner.extract_policies()
        v_max = best_response_value(game, nu, MAX)[0][0, x1]
        v_min = best_response_value(game, pi, MIN)[0][0, x1]
        gap = float(v_max - v_min)
        cum += gap
        gains = learner.info_gains()
        row = EpisodeRow(
            episode=t,
            duality_gap=gap,
            cum_regret=cum,
            vbar1=float(learner.Vbar[0, x1]),
            vlow1=float(learner.Vlow[0, x1]),
            beta_t=float(learner.beta_t),
            info_gain_mean=float(np.mean(gains)),
            clip_count=int(learner.clip_count),
            v_best_max=float(v_max),
            v_best_min=float(v_min),
            lp_pivots=int(learner.lp_pivots),
        )
        record.rows.append(row)
        record.info_gains.append(gains)
        traj = learner.execute_episode(game, rng)
        variances = learner.update_models(traj)
        for h, role, r2 in variances:
            V = learner.Vbar[h + 1] if role == OVER else learner.Vlow[h + 1]
            z = (traj.states[h], traj.actions_max[h], traj.actions_min[h])
            record.variance_checks.append((t, h, role, r2, conditional_variance(game, h, z, V)))
        if on_episode is not None:
            on_episode(row)
    if record.rows:
        record.t0 = select_t0(record)
        record.t0_gap = record.rows[record.t0 - 1].duality_gap
    record.model_stats = [
        {"name": name, "samples": len(s), "lam": s.lam + s.jitter, "potential": s.potential,
         "logdet": s.logdet_independent(), "info_gain": s.information_gain(),
         "widths_sq": s.sample_widths_sq.tolist(), "psi": s.psi.tolist()}
        for name, s in learner.all_states()
    ]
    return record
