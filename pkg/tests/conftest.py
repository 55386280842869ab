import numpy as np
import pytest

from kernelcce.game import GameConfig, KernelMixtureGame, generate_random_game


def matrix_game(payoff) -> KernelMixtureGame:
    """One-state, one-step game whose stage payoff is ``payoff``."""
    payoff = np.asarray(payoff, dtype=float)
    A = payoff.shape[0]
    return KernelMixtureGame(
        reward=payoff[None, None],
        features=np.ones((1, A, A, 1, 1)),
        theta_star=np.ones((1, 1)),
        norm_bound=1.0,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_game():
    return generate_random_game(GameConfig(n_states=3, n_actions=2, horizon=3, feature_dim=4),
                                np.random.default_rng(7))


@pytest.fixture
def canonical_game():
    from kernelcce.harness import canonical_game as make
    return make()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
