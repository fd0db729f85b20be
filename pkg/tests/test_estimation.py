import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from conftest import local_games, random_game
from pmkit.estimation import (
    EstimationError, InTree, bandit_estimator, bfs_tree, build_estimators, chain_estimator, edge_residual,
    full_info_estimator, global_edge_estimator, greedy_in_tree, local_edge_estimator, rebalance, verify_unbiased,
    water_transfer,
)
from pmkit.game import make_bernoulli_bandit, make_binary_full_info, make_costly_matching_pennies, validate_game
from pmkit.geometry import analyze

NAMED_LOCAL = [
    make_costly_matching_pennies(0.1), make_costly_matching_pennies(0.25), make_costly_matching_pennies(0.3),
    make_costly_matching_pennies(0.49), make_bernoulli_bandit(2), make_bernoulli_bandit(3),
    make_binary_full_info(2), make_binary_full_info(3),
]


def lp_min_sup_norm(game, edge):
    """Smallest sup-norm of any w over the two endpoint actions satisfying the edge identity."""
    a, b = edge
    cols = [pr for pr in game.pairs if pr[0] in edge]
    idx = {pr: j for j, pr in enumerate(cols)}
    n = len(cols)
    A_eq = np.zeros((game.d, n + 1))
    for x in range(game.d):
        for c in edge:
            A_eq[x, idx[(c, int(game.signals[c, x]))]] += 1.0
    b_eq = game.losses[a] - game.losses[b]
    A_ub = np.zeros((2 * n, n + 1))
    for j in range(n):
        A_ub[2 * j, j], A_ub[2 * j, n] = 1, -1
        A_ub[2 * j + 1, j], A_ub[2 * j + 1, n] = -1, -1
    cost = np.zeros(n + 1)
    cost[n] = 1
    res = linprog(cost, A_ub=A_ub, b_ub=np.zeros(2 * n), A_eq=A_eq, b_eq=b_eq,
                  bounds=[(None, None)] * (n + 1), method="highs")
    assert res.status == 0
    return res.fun


@pytest.mark.parametrize("game", NAMED_LOCAL, ids=lambda g: g.name)
def test_local_estimators_named_games(game):
    geo = analyze(game)
    assert geo.category.locally_observable
    for e in geo.graph.edges:
        est = local_edge_estimator(game, e)
        assert est.residual <= 1e-8
        assert edge_residual(game, e, est.w) <= 1e-8
        assert est.support(game) <= set(e)
        assert est.sup_norm <= game.m / 2 + 1e-9


def test_cmp_local_example(cmp025):
    est = local_edge_estimator(cmp025, (0, 2))
    assert est.residual <= 1e-8
    assert est.sup_norm <= 1.0 + 1e-9
    # the hand solution w1(bot)=0, w3(H)=-1/4, w3(T)=3/4 solves the same system
    labels = cmp025.labels
    w = np.zeros(len(cmp025.pairs))
    w[cmp025.pair_index[(2, labels.index("H"))]] = -0.25
    w[cmp025.pair_index[(2, labels.index("T"))]] = 0.75
    assert edge_residual(cmp025, (0, 2), w) <= 1e-12
    g = rebalance(cmp025, (0, 2), w)
    assert edge_residual(cmp025, (0, 2), g) <= 1e-12
    assert np.max(np.abs(g)) <= 1.0 + 1e-9


def test_bandit_edge_substitution():
    g = make_bernoulli_bandit(2)
    w = np.zeros(len(g.pairs))
    for (a, s), i in g.pair_index.items():
        loss = float(g.labels[s])
        w[i] = loss if a == 0 else -loss
    assert edge_residual(g, (0, 1), w) <= 1e-12
    assert local_edge_estimator(g, (0, 1)).sup_norm <= g.m / 2 + 1e-9


def test_rebalancing_can_exceed_half_m():
    # two signal labels, yet no pairwise estimator has sup-norm below 3/2
    g = validate_game([[0, 1, 0], [1, 0, 1]], [["u", "u", "v"], ["u", "v", "v"]])
    geo = analyze(g)
    assert geo.category.locally_observable and g.m == 2
    est = local_edge_estimator(g, (0, 1))
    assert lp_min_sup_norm(g, (0, 1)) == pytest.approx(1.5, abs=1e-9)
    assert est.sup_norm == pytest.approx(1.5, abs=1e-9)
    assert est.residual <= 1e-8


@given(st.integers(2, 4), st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_rebalanced_norm_is_optimal(k, d, seed):
    rng = np.random.default_rng(seed)
    g = random_game(rng, k, d, n_signals=3)
    geo = analyze(g)
    for e in geo.graph.edges:
        if not geo.local_witnesses[e].solvable:
            continue
        est = local_edge_estimator(g, e)
        assert est.residual <= 1e-8
        assert est.sup_norm <= lp_min_sup_norm(g, e) + 1e-8


@given(st.integers(2, 4), st.integers(2, 5), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=40, deadline=None)
def test_rebalance_preserves_edge_sums(k, d, seed):
    rng = np.random.default_rng(seed)
    g = random_game(rng, k, d, n_signals=3)
    e = (0, 1)
    f = rng.normal(size=len(g.pairs))
    f[[i for i, (a, _) in enumerate(g.pairs) if a not in e]] = 0
    h = rebalance(g, e, f)
    ia, ib = g.pair_of[0], g.pair_of[1]
    assert np.allclose(h[ia] + h[ib], f[ia] + f[ib], atol=1e-12)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
@settings(max_examples=60, deadline=None)
def test_global_estimator_norm(k, d, seed):
    rng = np.random.default_rng(seed)
    g = random_game(rng, k, d, n_signals=int(rng.integers(1, d + 1)))
    geo = analyze(g)
    if not geo.category.globally_observable:
        for e in geo.graph.edges:
            if not geo.global_witnesses[e].solvable:
                with pytest.raises(EstimationError):
                    global_edge_estimator(g, e)
        return
    for e in geo.graph.edges:
        est = global_edge_estimator(g, e)
        assert est.residual <= 1e-8
        assert est.sup_norm <= np.sqrt(d) * k ** (d / 2) + 1e-6
    est = build_estimators(geo)
    if est.G_global is not None:
        assert verify_unbiased(g, est.G_global, geo.pareto).ok(1e-8)
        if est.global_:
            assert est.beta <= g.k * max(w.sup_norm for w in est.global_.values()) + 1e-12


def test_global_cmp1():
    g = make_costly_matching_pennies(1.0)
    est = global_edge_estimator(g, (0, 1))
    sums = est.w[g.pair_of].sum(axis=0)
    assert np.allclose(sums, g.losses[0] - g.losses[1], atol=1e-8)
    assert set(np.abs(sums).round(9)) == {1.0}
    assert est.sup_norm <= np.sqrt(2) * 3 + 1e-6


def test_non_observable_edge_errors():
    g = validate_game([[0, 1], [1, 0]], [[0, 0], [0, 0]])
    with pytest.raises(EstimationError):
        global_edge_estimator(g, (0, 1))
    with pytest.raises(EstimationError):
        local_edge_estimator(g, (0, 1))


@pytest.mark.parametrize("game", NAMED_LOCAL + [make_costly_matching_pennies(0.6), make_costly_matching_pennies(1.0)],
                         ids=lambda g: g.name)
def test_chained_identity(game):
    geo = analyze(game)
    est = build_estimators(geo)
    tables = est.local if est.local else est.global_
    G = chain_estimator(game, est.tree, tables)
    p = np.full(game.k, 1.0 / game.k)
    rep = verify_unbiased(game, G, geo.pareto, p=p)
    assert rep.ok(1e-8)
    # explicit (b, c, x) loop as an independent check
    for x in range(game.d):
        tot = G.at_outcome(game, x).sum(axis=0)
        for b, c in itertools.product(geo.pareto, repeat=2):
            assert abs(tot[b] - tot[c] - (game.losses[b, x] - game.losses[c, x])) <= 1e-8
    assert G.sup_norm <= game.k * max(w.sup_norm for w in tables.values()) + 1e-12
    if est.local:
        assert G.sup_norm <= game.k * game.m / 2 + 1e-9


def test_chain_cmp_tree_rooted_at_three(cmp025):
    geo = analyze(cmp025)
    est = build_estimators(geo)
    tree = InTree({0: 2, 1: 2, 2: None})
    G = chain_estimator(cmp025, tree, est.local)
    assert np.all(G.G[:, 2] == 0)
    assert verify_unbiased(cmp025, G, geo.pareto).ok(1e-8)


def test_single_pareto_chain_is_zero():
    g = validate_game([[0, 0], [1, 1]], [[0, 0], [0, 1]])
    G = chain_estimator(g, InTree({0: None}), {})
    assert G.sup_norm == 0


def test_chain_missing_edge():
    g = make_costly_matching_pennies(0.25)
    with pytest.raises(EstimationError):
        chain_estimator(g, InTree({0: 1, 1: None}), {})


def test_named_estimators_unbiased():
    p = np.array([0.2, 0.3, 0.5])
    g = make_bernoulli_bandit(3)
    assert verify_unbiased(g, bandit_estimator(g), range(3), p=p).ok(1e-12)
    g = make_binary_full_info(3)
    assert verify_unbiased(g, full_info_estimator(g, p), range(3), p=p).ok(1e-12)
    with pytest.raises(EstimationError):
        bandit_estimator(make_costly_matching_pennies(0.3))


def test_in_tree_structure():
    t = InTree.from_edges([0, 1, 2, 3], [(1, 0), (2, 1), (3, 1)])
    assert t.root == 0
    assert t.path(0) == []
    assert t.depth == {0: 1, 1: 2, 2: 3, 3: 3}
    assert t.desc(1) == {1, 2, 3}
    with pytest.raises(EstimationError):
        InTree({0: None, 1: None})
    with pytest.raises(EstimationError):
        InTree({0: 1, 1: 0, 2: None})


def test_greedy_examples(cmp025):
    geo = analyze(cmp025)
    tree = greedy_in_tree(cmp025, geo.graph, [0.9, 0.1])
    assert tree.root == 0
    assert tree.edges == [(1, 2), (2, 0)]
    for nu in ([0.75, 0.25], [0.25, 0.75], [0.5, 0.5]):
        tree = greedy_in_tree(cmp025, geo.graph, nu)
        ell = cmp025.losses @ np.array(nu)
        for a, b in tree.edges:
            assert ell[b] <= ell[a] + 1e-10
    g = validate_game([[0, 0], [1, 1]], [[0, 0], [0, 1]])
    geo1 = analyze(g)
    tree = greedy_in_tree(g, geo1.graph, [0.5, 0.5])
    assert tree.edges == [] and tree.root == 0


def test_water_examples():
    r = water_transfer([1.0, 0.0], InTree({0: 1, 1: None}))
    assert np.allclose(r, [0.5, 0.5])
    k = 4
    star = InTree({0: None, 1: 0, 2: 0, 3: 0})
    r = water_transfer(np.full(k, 1 / k), star)
    assert r[0] == pytest.approx((k - 1) / (2 * k) + 1 / k)
    assert np.allclose(r[1:], 1 / (2 * k))
    assert r.sum() == pytest.approx(1.0)
    assert np.allclose(water_transfer([1.0], InTree({0: None})), [1.0])
    with pytest.raises(EstimationError):
        water_transfer([0.5, 0.5], InTree({0: None}))


@pytest.mark.parametrize("game", local_games(), ids=lambda g: g.name)
def test_water_transfer_properties(game):
    geo = analyze(game)
    rng = np.random.default_rng(11)
    pi = geo.pareto
    k = game.k
    for _ in range(200):
        q = np.zeros(k)
        q[pi] = rng.dirichlet(np.ones(len(pi)) * rng.choice([0.2, 1.0, 5.0]))
        nu = rng.dirichlet(np.ones(game.d) * rng.choice([0.2, 1.0, 5.0]))
        tree = greedy_in_tree(game, geo.graph, nu)
        r = water_transfer(q, tree)
        assert abs(r.sum() - 1) <= 1e-12 and np.all(r >= 0)
        ell = game.losses @ nu
        assert (r - q) @ ell <= 1e-9
        assert np.all(r >= q / k - 1e-12)
        for a, b in tree.edges:
            assert r[a] <= r[b] + 1e-12
