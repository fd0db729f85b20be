import sys

import numpy as np
import pytest

from pmkit.game import (
    make_bandit, make_bernoulli_bandit, make_binary_full_info, make_costly_matching_pennies, make_full_info,
    validate_game,
)


def random_game(rng, k, d, n_signals=None, integer_losses=False):
    """Random loss matrix and per-action signal rows with up to ``n_signals`` labels."""
    if integer_losses:
        L = rng.integers(0, 3, size=(k, d)) / 2.0
    else:
        L = np.round(rng.random((k, d)), 3)
    ns = n_signals or d
    S = [[f"s{rng.integers(0, ns)}" for _ in range(d)] for _ in range(k)]
    return validate_game(L, S, name="random")


def simplex_grid(d, steps):
    """All points of the d-simplex with coordinates in multiples of 1/steps."""
    if d == 1:
        return np.ones((1, 1))
    pts = []

    def rec(prefix, left):
        if len(prefix) == d - 1:
            pts.append(prefix + [left])
            return
        for i in range(left + 1):
            rec(prefix + [i], left - i)

    rec([], steps)
    return np.array(pts, dtype=float) / steps


@pytest.fixture
def cmp025():
    return make_costly_matching_pennies(0.25)


@pytest.fixture
def cmp03():
    return make_costly_matching_pennies(0.3)


@pytest.fixture
def cmp1():
    return make_costly_matching_pennies(1.0)


@pytest.fixture
def full2():
    return make_binary_full_info(2)


@pytest.fixture
def bandit3():
    return make_bernoulli_bandit(3)


# locally observable, non-degenerate games used by several suites
def local_games():
    return [
        make_costly_matching_pennies(0.1),
        make_costly_matching_pennies(0.25),
        make_costly_matching_pennies(0.3),
        make_bernoulli_bandit(3),
        make_binary_full_info(3),
    ]


__all__ = ["random_game", "simplex_grid", "local_games", "make_bandit", "make_full_info"]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
