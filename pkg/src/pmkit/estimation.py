"""Loss-difference estimators, in-trees and the water transfer operator."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .game import Game, as_probability
from .geometry import TOL_OBS, Geometry, NeighbourGraph, local_support, solve_edge_system

TIE_PERTURBATION = 1e-9


class EstimationError(ValueError):
    pass


@dataclass
class EdgeEstimator:
    """w_e with sum_c w(c, Phi_cx) = L_ax - L_bx for edge e = (a, b)."""

    edge: tuple[int, int]
    w: np.ndarray  # indexed by game.pairs
    kind: str  # "local" | "local-extended" | "global"
    residual: float

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.w))) if self.w.size else 0.0

    def support(self, game: Game) -> set[int]:
        return {game.pairs[i][0] for i in np.flatnonzero(np.abs(self.w) > 0)}

    def value(self, game: Game, a: int, sid: int) -> float:
        i = game.pair_index.get((a, sid))
        return 0.0 if i is None else float(self.w[i])

    def reversed(self) -> "EdgeEstimator":
        return EdgeEstimator((self.edge[1], self.edge[0]), -self.w, self.kind, self.residual)


def edge_residual(game: Game, edge: tuple[int, int], w: np.ndarray) -> float:
    a, b = edge
    est = w[game.pair_of].sum(axis=0)
    return float(np.max(np.abs(est - (game.losses[a] - game.losses[b]))))


def _to_pair_vector(game: Game, wdict: dict) -> np.ndarray:
    w = np.zeros(len(game.pairs))
    for pr, v in wdict.items():
        w[game.pair_index[pr]] = v
    return w


def rebalance(game: Game, edge: tuple[int, int], w: np.ndarray) -> np.ndarray:
    """Shift w_a up and w_b down by a constant per connected component.

    The components are those of the bipartite graph joining (a, Phi_ax) and
    (b, Phi_bx) for every outcome x, so every such shift keeps the edge
    identity. The shift centres the values, which minimises the sup-norm.
    """
    a, b = edge
    w = w.copy()
    ia = game.pair_of[a]
    ib = game.pair_of[b]
    parent: dict[int, int] = {}

    def find(u):
        while parent.setdefault(u, u) != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    for x in range(game.d):
        ru, rv = find(int(ia[x])), find(int(ib[x]))
        if ru != rv:
            parent[ru] = rv
    comps: dict[int, tuple[set, set]] = {}
    for x in range(game.d):
        root = find(int(ia[x]))
        left, right = comps.setdefault(root, (set(), set()))
        left.add(int(ia[x]))
        right.add(int(ib[x]))
    for left, right in comps.values():
        vals = [w[i] for i in left] + [-w[j] for j in right]
        shift = -(max(vals) + min(vals)) / 2
        for i in left:
            w[i] += shift
        for j in right:
            w[j] -= shift
    return w


def local_edge_estimator(game: Game, edge: tuple[int, int], degenerate: bool = False) -> EdgeEstimator:
    """Estimator for a neighbour edge using only the two endpoint actions."""
    a, b = edge
    sol = solve_edge_system(game, edge, [a, b])
    if sol.solvable:
        w = rebalance(game, edge, _to_pair_vector(game, sol.w))
        return EdgeEstimator(edge, w, "local", edge_residual(game, edge, w))
    if degenerate:
        acts = local_support(game, edge)
        sol = solve_edge_system(game, edge, acts)
        if sol.solvable:
            w = _to_pair_vector(game, sol.w)
            return EdgeEstimator(edge, w, "local-extended", edge_residual(game, edge, w))
    raise EstimationError(f"edge {edge} is not locally observable (residual {sol.residual:.3g})")


def global_edge_estimator(game: Game, edge: tuple[int, int]) -> EdgeEstimator:
    """Minimum-norm estimator over all actions (pseudo-inverse solution)."""
    sol = solve_edge_system(game, edge, list(range(game.k)))
    if not sol.solvable:
        raise EstimationError(f"edge {edge} is not globally observable (residual {sol.residual:.3g})")
    w = _to_pair_vector(game, sol.w)
    return EdgeEstimator(edge, w, "global", edge_residual(game, edge, w))


@dataclass
class InTree:
    """Directed tree with every vertex pointing towards ``root``."""

    parent: dict[int, int | None]

    def __post_init__(self):
        roots = [v for v, p in self.parent.items() if p is None]
        if len(roots) != 1:
            raise EstimationError(f"in-tree needs exactly one root, got {roots}")
        for v in self.parent:
            seen = set()
            u = v
            while self.parent[u] is not None:
                if u in seen:
                    raise EstimationError("cycle in in-tree")
                seen.add(u)
                u = self.parent[u]
                if u not in self.parent:
                    raise EstimationError(f"parent {u} is not a vertex")

    @property
    def root(self) -> int:
        return next(v for v, p in self.parent.items() if p is None)

    @property
    def vertices(self) -> list[int]:
        return sorted(self.parent)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((v, p) for v, p in self.parent.items() if p is not None)

    def path(self, a: int) -> list[tuple[int, int]]:
        out = []
        while self.parent[a] is not None:
            out.append((a, self.parent[a]))
            a = self.parent[a]
        return out

    @cached_property
    def depth(self) -> dict[int, int]:
        return {v: len(self.path(v)) + 1 for v in self.parent}

    @cached_property
    def _desc(self) -> dict[int, set[int]]:
        out = {v: {v} for v in self.parent}
        for v in self.parent:
            for _, anc in self.path(v):
                out[anc].add(v)
        return out

    def desc(self, a: int) -> set[int]:
        return self._desc[a]

    @classmethod
    def from_edges(cls, vertices, edges) -> "InTree":
        parent: dict[int, int | None] = {v: None for v in vertices}
        for a, b in edges:
            parent[a] = b
        return cls(parent)


def bfs_tree(graph: NeighbourGraph, root: int | None = None) -> InTree:
    """Breadth-first in-tree over the graph's vertices (lowest index first)."""
    if not graph.vertices:
        raise EstimationError("empty graph")
    root = graph.vertices[0] if root is None else root
    adj = graph.adjacency
    parent: dict[int, int | None] = {root: None}
    queue = deque([root])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in parent:
                parent[w] = v
                queue.append(w)
    if len(parent) != len(graph.vertices):
        raise EstimationError("neighbour graph is disconnected")
    return InTree(parent)


@dataclass
class EstimationFunction:
    """G(a, sigma) in R^k, stored per realizable (action, signal) pair."""

    G: np.ndarray  # shape (len(game.pairs), k)
    unbiased: bool = False
    source: str = ""

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.G))) if self.G.size else 0.0

    def value(self, game: Game, a: int, sid: int) -> np.ndarray:
        i = game.pair_index.get((a, sid))
        return np.zeros(game.k) if i is None else self.G[i].copy()

    def at_outcome(self, game: Game, x: int) -> np.ndarray:
        """k x k matrix whose row a is G(a, Phi_ax)."""
        return self.G[game.pair_of[:, x]]


def chain_estimator(game: Game, tree: InTree, edge_estimators: dict) -> EstimationFunction:
    """G(a, sigma)_b = sum of w_e(a, sigma) over the tree path from b."""
    G = np.zeros((len(game.pairs), game.k))
    oriented: dict[tuple[int, int], np.ndarray] = {}
    for e in tree.edges:
        if e in edge_estimators:
            oriented[e] = edge_estimators[e].w
        elif (e[1], e[0]) in edge_estimators:
            oriented[e] = -edge_estimators[(e[1], e[0])].w
        else:
            raise EstimationError(f"no estimator for tree edge {e}")
    for b in tree.vertices:
        for e in tree.path(b):
            G[:, b] += oriented[e]
    return EstimationFunction(G, unbiased=True, source="chained")


@dataclass
class UnbiasedReport:
    max_violation: float
    expectation_violation: float | None = None

    def ok(self, tol: float = 1e-8) -> bool:
        worst = max(self.max_violation, self.expectation_violation or 0.0)
        return worst <= tol


def verify_unbiased(game: Game, G: EstimationFunction, pareto, p=None) -> UnbiasedReport:
    """Largest violation of the pairwise loss-difference identity over Pi."""
    pareto = list(pareto)
    S = G.G[game.pair_of].sum(axis=0)  # (d, k): sum_a G(a, Phi_ax)
    L = game.losses
    worst = 0.0
    for b in pareto:
        for c in pareto:
            viol = np.abs((S[:, b] - S[:, c]) - (L[b] - L[c]))
            worst = max(worst, float(viol.max()))
    exp_worst = None
    if p is not None:
        p = as_probability(p, game.k)
        if np.any(p <= 0):
            raise ValueError("expectation check needs strictly positive p")
        exp_worst = 0.0
        for x in range(game.d):
            Gx = G.at_outcome(game, x)  # (k actions, k comps)
            est = (p[:, None] * Gx / p[:, None]).sum(axis=0)
            for b in pareto:
                for c in pareto:
                    exp_worst = max(exp_worst, abs(est[b] - est[c] - (L[b, x] - L[c, x])))
    return UnbiasedReport(worst, exp_worst)


def bandit_estimator(game: Game) -> EstimationFunction:
    """G(a, sigma) = e_a * loss revealed by sigma."""
    if not game.signal_reveals_own_loss():
        raise EstimationError("signals do not reveal own losses")
    G = np.zeros((len(game.pairs), game.k))
    for a in range(game.k):
        for x in range(game.d):
            G[game.pair_of[a, x], a] = game.losses[a, x]
    return EstimationFunction(G, unbiased=True, source="bandit")


def full_info_estimator(game: Game, p) -> EstimationFunction:
    """G(a, sigma) = p_a * loss column revealed by sigma."""
    if not game.signal_reveals_column():
        raise EstimationError("signals do not reveal loss columns")
    p = np.asarray(p, dtype=float)
    G = np.zeros((len(game.pairs), game.k))
    for a in range(game.k):
        for x in range(game.d):
            G[game.pair_of[a, x]] = p[a] * game.losses[:, x]
    return EstimationFunction(G, unbiased=True, source="full-info")


def greedy_in_tree(game: Game, graph: NeighbourGraph, nu) -> InTree:
    """In-tree along which L nu decreases towards the optimal action for nu.

    Boundary points are perturbed towards the uniform distribution (and then
    towards a fixed generic interior point) until the greedy parents are
    strictly better.
    """
    nu = as_probability(nu, game.d, tol=1e-9)
    if not graph.vertices:
        raise EstimationError("no Pareto actions")
    if not graph.is_connected():
        raise EstimationError("neighbour graph is disconnected")
    generic = np.arange(1, game.d + 1, dtype=float) ** 0.5
    targets = [None, np.full(game.d, 1.0 / game.d), generic / generic.sum()]
    for target in targets:
        v = nu if target is None else (1 - TIE_PERTURBATION) * nu + TIE_PERTURBATION * target
        tree = _greedy(game, graph, v)
        if tree is not None:
            return tree
    raise EstimationError("could not build a greedy in-tree")


def _greedy(game: Game, graph: NeighbourGraph, nu) -> InTree | None:
    ell = game.losses @ nu
    verts = graph.vertices
    root = min(verts, key=lambda a: (ell[a], a))
    adj = graph.adjacency
    parent: dict[int, int | None] = {root: None}
    for a in verts:
        if a == root:
            continue
        if not adj[a]:
            return None
        b = min(adj[a], key=lambda c: (ell[c], c))
        if not ell[b] < ell[a]:
            return None
        parent[a] = b
    return InTree(parent)


def water_transfer(q, tree: InTree) -> np.ndarray:
    """r_a = sum over descendants b of a of q_b / depth(b)."""
    q = np.asarray(q, dtype=float)
    verts = set(tree.vertices)
    off = [a for a in range(q.size) if a not in verts and q[a] != 0]
    if off:
        raise EstimationError(f"q has mass on actions outside the tree: {off}")
    r = np.zeros_like(q)
    for a in verts:
        r[a] = sum(q[b] / tree.depth[b] for b in tree.desc(a))
    return r


@dataclass
class Estimators:
    """Per-game estimator bundle prepared once and shared by the learners."""

    local: dict = field(default_factory=dict)
    global_: dict = field(default_factory=dict)
    tree: InTree | None = None
    G_global: EstimationFunction | None = None
    beta: float = 0.0


def build_estimators(geom: Geometry) -> Estimators:
    """Local (when available) and global edge estimators plus a chained G."""
    game = geom.game
    out = Estimators()
    if not geom.category.globally_observable or not geom.pareto:
        return out
    for e in geom.graph.edges:
        out.global_[e] = global_edge_estimator(game, e)
        if geom.category.locally_observable:
            out.local[e] = local_edge_estimator(game, e, degenerate=geom.category.degenerate)
    # duplicate Pareto actions share a cell, so they are never neighbours;
    # their loss difference is zero and joins the graph with a zero estimator
    pareto = set(geom.pareto)
    dups = [e for e in geom.classification.duplicates if set(e) <= pareto]
    for e in dups:
        zero = EdgeEstimator(e, np.zeros(len(game.pairs)), "duplicate", 0.0)
        out.global_[e] = zero
        if geom.category.locally_observable:
            out.local[e] = zero
    graph = NeighbourGraph(geom.graph.vertices, geom.graph.edges + dups)
    out.tree = bfs_tree(graph)
    out.G_global = chain_estimator(game, out.tree, out.global_)
    out.G_global.source = "chained-global"
    out.beta = out.G_global.sup_norm
    return out


def c_game(game: Game, est: Estimators) -> float:
    """max{1, 2 k beta} for the chained global estimator."""
    return max(1.0, 2 * game.k * est.beta)
