import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pmkit.game import (
    GameError, GameFormatError, SimplexVector, as_probability, expected_loss, game_from_dict, load_game,
    make_bandit, make_binary_full_info, make_costly_matching_pennies, make_full_info, resolve_game, save_game,
    validate_game,
)


def test_cmp_shape_and_signals(cmp025):
    g = cmp025
    assert (g.k, g.d, g.m) == (3, 2, 2)
    assert g.signals[0, 0] == g.signals[0, 1] == g.signals[1, 0]
    assert g.signals[2, 0] != g.signals[2, 1]
    assert g.labels[g.signals[2, 0]] == "H"


def test_smallest_game():
    g = validate_game([[0]], [[0]])
    assert (g.k, g.d, g.m) == (1, 1, 1)


@pytest.mark.parametrize("L,S", [
    ([[1.5]], [[0]]),
    ([[-0.1, 0]], [[0, 0]]),
    ([[0, 1]], [[0]]),
    ([], []),
    ([[0, 1], [1, 0]], [[0, 1]]),
])
def test_validate_rejects(L, S):
    with pytest.raises(GameError):
        validate_game(L, S)


def test_bandit_constructor():
    g = make_bandit([[0, 1], [1, 0]])
    assert g.m == 2
    assert g.signal_reveals_own_loss()
    assert make_bandit(np.full((2, 3), 0.5)).m == 1


def test_full_info_constructor():
    g = make_full_info([[0, 1], [1, 0]])
    assert g.m == 2
    assert np.array_equal(g.signals[0], g.signals[1])
    assert make_binary_full_info(2).m == 4
    assert make_full_info(np.full((2, 3), 0.2)).m == 1
    assert g.signal_reveals_column()


def test_cmp_rescaling():
    g = make_costly_matching_pennies(3.0)
    assert g.scale == 3.0
    assert g.losses.max() <= 1.0
    assert np.allclose(g.losses[2], [1.0, 1.0])
    assert make_costly_matching_pennies(1.0).scale == 1.0
    with pytest.raises(GameError):
        make_costly_matching_pennies(-0.1)


def test_expected_loss_examples(cmp025):
    g = cmp025
    nu = np.array([0.3, 0.7])
    assert expected_loss([0, 0, 1], g, nu) == pytest.approx(0.25)
    mp = validate_game([[0, 1], [1, 0]], [[0, 0], [0, 0]])
    assert expected_loss([0.5, 0.5], mp, [0.9, 0.1]) == pytest.approx(0.5)
    q = np.array([0.4, 0.4, 0.2])
    p = np.array([0, 0, 1.0])
    assert np.allclose((p - q) @ g.losses, [-0.2, -0.2], atol=1e-15)
    with pytest.raises(ValueError):
        expected_loss([1.0], g, nu)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=100, deadline=None)
def test_cmp_mass_transfer(c, q1, q2, alpha):
    g = make_costly_matching_pennies(c)
    q = np.array([q1, q2, 1.0 + 1e-3])
    q = q / q.sum()
    mu = min(q[0], q[1])
    p = q - mu * np.array([1, 1, 0]) + 2 * mu * np.array([0, 0, 1])
    assert np.allclose((p - q) @ g.losses, mu * (2 * c - 1), atol=1e-12)


@given(st.integers(1, 4), st.integers(1, 4), st.floats(0, 1), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=50, deadline=None)
def test_expected_loss_bilinear(k, d, alpha, seed):
    rng = np.random.default_rng(seed)
    g = validate_game(rng.random((k, d)), [[0] * d] * k)
    p1, p2 = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    nu = rng.dirichlet(np.ones(d))
    mix = alpha * p1 + (1 - alpha) * p2
    mix = mix / mix.sum()
    lhs = expected_loss(mix, g, nu)
    rhs = alpha * expected_loss(p1, g, nu) + (1 - alpha) * expected_loss(p2, g, nu)
    assert abs(lhs - rhs) <= 1e-12


@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=50, deadline=None)
def test_m_bounded_by_d(k, d, seed):
    rng = np.random.default_rng(seed)
    L = rng.integers(0, 2, size=(k, d)).astype(float)
    for g in (make_bandit(L), make_full_info(L)):
        assert 1 <= g.m <= d


def test_round_trip(tmp_path, cmp03):
    path = tmp_path / "g.json"
    save_game(cmp03, path)
    back = load_game(path)
    assert back == cmp03
    assert back.scale == cmp03.scale and back.name == cmp03.name
    g3 = make_costly_matching_pennies(2.5)
    save_game(g3, path)
    assert load_game(path).scale == 2.5


def test_interning_first_appearance(tmp_path):
    path = tmp_path / "g.json"
    path.write_text(json.dumps({"name": "x", "losses": [[0, 1], [1, 0], [0.3, 0.3]],
                                "signals": [["⊥", "⊥"], ["⊥", "⊥"], ["H", "T"]]}))
    g = load_game(path)
    assert g.labels == ("⊥", "H", "T")
    assert g.signals.tolist() == [[0, 0], [0, 0], [1, 2]]
    # integers and strings with the same text are distinct labels
    g2 = validate_game([[0, 0]], [[1, "1"]])
    assert g2.m == 2


def test_malformed_files(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"losses": [[0, 1]],\n "signals": [[0, 1]')
    with pytest.raises(GameFormatError, match="line 2"):
        load_game(path)
    with pytest.raises(GameFormatError, match="losses\\[0\\]\\[1\\]"):
        game_from_dict({"losses": [[0, "a"]], "signals": [[0, 0]]})
    with pytest.raises(GameFormatError, match="missing field"):
        game_from_dict({"losses": [[0]]})


def test_simplex_vector():
    v = SimplexVector([0.25, 0.75])
    assert len(v) == 2
    with pytest.raises(ValueError):
        SimplexVector([0.5, 0.6])
    with pytest.raises(ValueError):
        SimplexVector([1.5, -0.5])
    with pytest.raises(ValueError):
        SimplexVector([0.5, 0.5 + 1e-9])
    assert np.allclose(as_probability(v), [0.25, 0.75])


def test_resolve_builtin():
    assert resolve_game("builtin:cmp:0.3").k == 3
    assert resolve_game("builtin:full:2").d == 4
    assert resolve_game("builtin:bandit:3").k == 3
    with pytest.raises(GameFormatError):
        resolve_game("builtin:nope")
