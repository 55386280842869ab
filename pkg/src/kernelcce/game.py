"""Kernel mixture Markov games: construction, simulation and exact oracles.

A game has finite states, a shared finite action set for the max player (row,
action ``a``) and the min player (column, action ``b``), and horizon ``H``.
Transitions at step ``h`` are ``P_h(s'|z) = <phi(s'|z), theta_h>`` for an
explicit feature map ``phi`` and hidden parameter ``theta_h``, optionally mixed
with an off-model distribution at weight ``iota``.

Array layout used throughout the package::

    reward       (H, S, A, A)
    features     (S, A, A, S, d)   features[x, a, b, s'] = phi(s'|x, a, b)
    theta_star   (H, d)
    transitions  (H, S, A, A, S)
    policies     (H, S, A)
    values       (H + 1, S)        values[H] == 0
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .equilibrium import matrix_game_value

GAME_FORMAT = "kmg-v1"

MAX = "max"
MIN = "min"


@dataclass(eq=False)
class KernelMixtureGame:
    reward: np.ndarray
    features: np.ndarray
    theta_star: np.ndarray
    norm_bound: float
    initial_state: int = 0
    misspec_weight: float = 0.0
    misspec_dist: np.ndarray | None = None
    transitions: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        # contiguous copies keep the einsum summation order independent of provenance
        self.reward = np.ascontiguousarray(self.reward, dtype=float)
        self.features = np.ascontiguousarray(self.features, dtype=float)
        self.theta_star = np.ascontiguousarray(self.theta_star, dtype=float)
        H, S, A, A2 = self.reward.shape
        if A != A2:
            raise ValueError("reward must have shape (H, S, A, A)")
        if self.features.shape[:4] != (S, A, A, S):
            raise ValueError(f"features must have shape (S, A, A, S, d), got {self.features.shape}")
        if self.theta_star.shape != (H, self.feature_dim):
            raise ValueError("theta_star must have shape (H, d)")
        if not 0 <= self.initial_state < S:
            raise ValueError("initial_state out of range")
        if not 0.0 <= self.misspec_weight <= 1.0:
            raise ValueError("misspec_weight must lie in [0, 1]")
        model = np.einsum("xabsi,hi->hxabs", self.features, self.theta_star)
        if self.misspec_dist is not None:
            self.misspec_dist = np.ascontiguousarray(self.misspec_dist, dtype=float)
            if self.misspec_dist.shape != model.shape:
                raise ValueError("misspec_dist must have shape (H, S, A, A, S)")
            model = (1.0 - self.misspec_weight) * model + self.misspec_weight * self.misspec_dist
        elif self.misspec_weight > 0:
            raise ValueError("misspec_weight > 0 requires misspec_dist")
        self.transitions = model

    @property
    def horizon(self) -> int:
        return self.reward.shape[0]

    @property
    def n_states(self) -> int:
        return self.reward.shape[1]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[2]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[-1]

    def in_model_transitions(self) -> np.ndarray:
        return np.einsum("xabsi,hi->hxabs", self.features, self.theta_star)

    def check_invariants(self, tol: float = 1e-12) -> list[str]:
        """Return a list of violated invariants (empty when the game is well formed)."""
        problems = []
        model = self.in_model_transitions()
        if model.min() < -tol:
            problems.append(f"in-model transition has negative entry {model.min():.3e}")
        if np.abs(model.sum(-1) - 1.0).max() > tol:
            problems.append("in-model transition rows do not sum to 1")
        # sup over ||V||_inf <= 1 of ||sum_s' phi(s'|z) V(s')||_2 is attained at a
        # sign vector; enumerate them when S is small, else use the triangle bound
        S = self.n_states
        if S <= 12:
            signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * S, indexing="ij")).reshape(S, -1)
            agg = np.einsum("xabsi,sk->xabki", self.features, signs)
            worst = np.linalg.norm(agg, axis=-1).max()
        else:
            worst = np.linalg.norm(self.features, axis=-1).sum(-1).max()
        if worst > 1.0 + 1e-9:
            problems.append(f"feature aggregate norm {worst:.6f} exceeds 1")
        if np.linalg.norm(self.theta_star, axis=1).max() > self.norm_bound + 1e-12:
            problems.append("theta_star exceeds the recorded norm bound")
        if np.abs(self.reward).max() > 1.0:
            problems.append("reward outside [-1, 1]")
        if self.misspec_dist is not None:
            tv = 0.5 * np.abs(self.transitions - model).sum(-1).max()
            if tv > self.misspec_weight + 1e-12:
                problems.append(f"misspecification TV {tv:.3e} exceeds iota")
        P = self.transitions
        if P.min() < -tol or np.abs(P.sum(-1) - 1.0).max() > tol:
            problems.append("realized transitions are not distributions")
        return problems


@dataclass(frozen=True)
class GameConfig:
    n_states: int = 3
    n_actions: int = 2
    horizon: int = 3
    feature_dim: int = 6
    norm_bound: float | None = None
    iota: float = 0.0
    dirichlet_alpha: float = 1.0
    initial_state: int = 0

    def validate(self):
        for name in ("n_states", "n_actions", "horizon", "feature_dim"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
        if not 0.0 <= self.iota <= 1.0:
            raise ValueError("iota must lie in [0, 1]")
        if self.dirichlet_alpha <= 0:
            raise ValueError("dirichlet_alpha must be positive")
        if not 0 <= self.initial_state < self.n_states:
            raise ValueError("initial_state out of range")


def generate_random_game(config: GameConfig, rng: np.random.Generator) -> KernelMixtureGame:
    """Sample a game satisfying every kernel-mixture invariant by construction.

    ``d`` base kernels ``P_i(.|z)`` are Dirichlet rows; ``phi(s'|z)_i = P_i(s'|z)/sqrt(d)``
    and ``theta_h = sqrt(d) * w_h`` with ``w_h`` uniform on the simplex, so the
    induced transition is the mixture ``sum_i w_{h,i} P_i``. The off-model
    distributions are drawn last so the in-model part does not depend on ``iota``.
    """
    config.validate()
    S, A, H, d = config.n_states, config.n_actions, config.horizon, config.feature_dim
    root_d = np.sqrt(d)
    reward = rng.uniform(-1.0, 1.0, size=(H, S, A, A))
    base = rng.dirichlet(np.full(S, config.dirichlet_alpha), size=(S, A, A, d))  # (S,A,A,d,S')
    features = np.moveaxis(base, 3, 4) / root_d
    weights = rng.dirichlet(np.ones(d), size=H)
    theta = root_d * weights
    bound = root_d if config.norm_bound is None else float(config.norm_bound)
    if np.linalg.norm(theta, axis=1).max() > bound + 1e-12:
        raise ValueError(f"norm_bound {bound} is smaller than the sampled parameter norm")
    misspec = None
    if config.iota > 0:
        misspec = rng.dirichlet(np.full(S, config.dirichlet_alpha), size=(H, S, A, A))
    return KernelMixtureGame(
        reward=reward,
        features=features,
        theta_star=theta,
        norm_bound=bound,
        initial_state=config.initial_state,
        misspec_weight=float(config.iota),
        misspec_dist=misspec,
    )


def _check_index(game: KernelMixtureGame, h: int, z):
    x, a, b = z
    if not 0 <= h < game.horizon:
        raise IndexError(f"step {h} out of range [0, {game.horizon})")
    if not (0 <= x < game.n_states and 0 <= a < game.n_actions and 0 <= b < game.n_actions):
        raise IndexError(f"tuple {z} out of range")


def transition_distribution(game: KernelMixtureGame, h: int, z) -> np.ndarray:
    """Next-state distribution at step ``h`` (0-based) from ``z = (x, a, b)``."""
    _check_index(game, h, z)
    x, a, b = z
    return game.transitions[h, x, a, b]


def sample_index(rng: np.random.Generator, probs: np.ndarray) -> int:
    """Inverse-CDF draw over the fixed ordering of ``probs`` using one uniform."""
    cdf = np.cumsum(probs)
    u = rng.random() * cdf[-1]
    return min(int(np.searchsorted(cdf, u, side="right")), len(probs) - 1)


def sample_next_state(rng: np.random.Generator, game: KernelMixtureGame, h: int, z) -> int:
    return sample_index(rng, transition_distribution(game, h, z))


@dataclass
class Trajectory:
    episode: int
    states: np.ndarray  # (H + 1,)
    actions_max: np.ndarray  # (H,)
    actions_min: np.ndarray  # (H,)
    rewards: np.ndarray  # (H,)

    def __len__(self):
        return len(self.rewards)

    def steps(self):
        for h in range(len(self)):
            yield (int(self.states[h]), int(self.actions_max[h]), int(self.actions_min[h]),
                   float(self.rewards[h]), int(self.states[h + 1]))


def validate_policy(policy: np.ndarray, game: KernelMixtureGame, tol: float = 1e-12):
    policy = np.asarray(policy, dtype=float)
    if policy.shape != (game.horizon, game.n_states, game.n_actions):
        raise ValueError(f"policy must have shape (H, S, A), got {policy.shape}")
    if policy.min() < -tol or np.abs(policy.sum(-1) - 1.0).max() > tol:
        raise ValueError("policy rows must be probability distributions")
    return policy


def uniform_policy(game: KernelMixtureGame) -> np.ndarray:
    return np.full((game.horizon, game.n_states, game.n_actions), 1.0 / game.n_actions)


def random_policy(game: KernelMixtureGame, rng: np.random.Generator) -> np.ndarray:
    return rng.dirichlet(np.ones(game.n_actions), size=(game.horizon, game.n_states))


def policy_value(game: KernelMixtureGame, pi: np.ndarray, nu: np.ndarray) -> np.ndarray:
    """V^{pi,nu}_h(x) for all steps, with a zero terminal row."""
    H, S = game.horizon, game.n_states
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q = game.reward[h] + game.transitions[h] @ V[h + 1]
        V[h] = np.einsum("xa,xab,xb->x", pi[h], Q, nu[h])
    return V


def best_response_value(game: KernelMixtureGame, opponent_policy: np.ndarray, responder: str):
    """Exact best-response values against a fixed opponent.

    ``responder="max"`` treats ``opponent_policy`` as the min player's ``nu`` and
    returns ``V^{*,nu}``; ``responder="min"`` treats it as ``pi`` and returns
    ``V^{pi,*}``. Also returns the deterministic best-response policy
    (ties broken by lowest action index).
    """
    H, S, A = game.horizon, game.n_states, game.n_actions
    V = np.zeros((H + 1, S))
    br = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q = game.reward[h] + game.transitions[h] @ V[h + 1]
        if responder == MAX:
            vals = np.einsum("xab,xb->xa", Q, opponent_policy[h])
            best = vals.argmax(axis=1)
        elif responder == MIN:
            vals = np.einsum("xa,xab->xb", opponent_policy[h], Q)
            best = vals.argmin(axis=1)
        else:
            raise ValueError(f"responder must be '{MAX}' or '{MIN}'")
        V[h] = vals[np.arange(S), best]
        br[h, np.arange(S), best] = 1.0
    return V, br


def nash_value(game: KernelMixtureGame):
    """Minimax values by backward induction; returns ``(V, pi_star, nu_star)``."""
    H, S, A = game.horizon, game.n_states, game.n_actions
    V = np.zeros((H + 1, S))
    pi = np.zeros((H, S, A))
    nu = np.zeros((H, S, A))
    for h in range(H - 1, -1, -1):
        Q = game.reward[h] + game.transitions[h] @ V[h + 1]
        for x in range(S):
            V[h, x], pi[h, x], nu[h, x] = matrix_game_value(Q[x])
    return V, pi, nu


def duality_gap(game: KernelMixtureGame, pi: np.ndarray, nu: np.ndarray) -> float:
    x1 = game.initial_state
    v_max, _ = best_response_value(game, nu, MAX)
    v_min, _ = best_response_value(game, pi, MIN)
    return float(v_max[0, x1] - v_min[0, x1])


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def save_game(game: KernelMixtureGame, path) -> None:
    doc = {
        "format": GAME_FORMAT,
        "n_states": game.n_states,
        "n_actions": game.n_actions,
        "horizon": game.horizon,
        "feature_dim": game.feature_dim,
        "norm_bound": game.norm_bound,
        "initial_state": game.initial_state,
        "misspec_weight": game.misspec_weight,
        "reward": _arr(game.reward),
        "features": _arr(game.features),
        "theta_star": _arr(game.theta_star),
        "misspec_dist": _arr(game.misspec_dist),
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_game(path) -> KernelMixtureGame:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != GAME_FORMAT:
        raise ValueError(f"{path}: expected format {GAME_FORMAT!r}, got {doc.get('format')!r}")
    game = KernelMixtureGame(
        reward=np.array(doc["reward"], dtype=float),
        features=np.array(doc["features"], dtype=float),
        theta_star=np.array(doc["theta_star"], dtype=float),
        norm_bound=float(doc["norm_bound"]),
        initial_state=int(doc["initial_state"]),
        misspec_weight=float(doc["misspec_weight"]),
        misspec_dist=None if doc["misspec_dist"] is None else np.array(doc["misspec_dist"], dtype=float),
    )
    if (game.n_states, game.n_actions, game.horizon, game.feature_dim) != (
            doc["n_states"], doc["n_actions"], doc["horizon"], doc["feature_dim"]):
        raise ValueError(f"{path}: header dimensions disagree with arrays")
    return game
