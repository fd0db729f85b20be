"""Cell decomposition, neighbourhood graph, observability and classification."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .game import Game
from .lp import solve_lp

TOL_DIM = 1e-7
TOL_OBS = 1e-8
TOL_DUP = 1e-12


@dataclass(frozen=True)
class Polytope:
    """{nu : A nu <= b, E nu = f} in R^dim."""

    A: np.ndarray
    b: np.ndarray
    E: np.ndarray
    f: np.ndarray

    @property
    def dim_ambient(self) -> int:
        return self.A.shape[1]

    def intersect(self, other: "Polytope") -> "Polytope":
        return Polytope(
            np.vstack([self.A, other.A]), np.concatenate([self.b, other.b]),
            np.vstack([self.E, other.E]), np.concatenate([self.f, other.f]),
        )

    def contains(self, nu, tol: float = 1e-9) -> bool:
        nu = np.asarray(nu, dtype=float)
        ok = np.all(self.A @ nu <= self.b + tol)
        return bool(ok and np.all(np.abs(self.E @ nu - self.f) <= tol))


def simplex_polytope(d: int) -> Polytope:
    return Polytope(-np.eye(d), np.zeros(d), np.ones((1, d)), np.ones(1))


@dataclass
class DimensionResult:
    dim: int
    marginal: bool = False
    spreads: list[float] = field(default_factory=list)


def _null_basis(vectors: list[np.ndarray], n: int) -> np.ndarray:
    """Orthonormal basis (columns) of the complement of span(vectors)."""
    if not vectors:
        return np.eye(n)
    M = np.array(vectors)
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    rank = int(np.sum(s > 1e-10))
    return vt[rank:].T


def polytope_dimension_report(poly: Polytope, tol_dim: float = TOL_DIM) -> DimensionResult:
    """Affine-hull dimension by repeated LPs along untested directions."""
    n = poly.dim_ambient
    lp_args = dict(A_ub=poly.A, b_ub=poly.b, A_eq=poly.E if poly.E.size else None,
                   b_eq=poly.f if poly.E.size else None)
    start = solve_lp(np.zeros(n), **lp_args)
    if start.status == "infeasible":
        return DimensionResult(-1)
    found: list[np.ndarray] = []
    flat: list[np.ndarray] = [row / np.linalg.norm(row) for row in poly.E if np.linalg.norm(row) > 0]
    spreads: list[float] = []
    marginal = False
    while True:
        basis = _null_basis(found + flat, n)
        if basis.shape[1] == 0:
            break
        u = basis[:, 0]
        hi = solve_lp(u, maximize=True, **lp_args)
        lo = solve_lp(u, **lp_args)
        if hi.status != "optimal" or lo.status != "optimal":
            # unbounded in direction u
            found.append(u)
            spreads.append(np.inf)
            continue
        spread = hi.value - lo.value
        spreads.append(spread)
        if tol_dim / 10 < spread < 10 * tol_dim:
            marginal = True
        if spread > tol_dim:
            found.append((hi.x - lo.x) / np.linalg.norm(hi.x - lo.x))
        else:
            flat.append(u)
    return DimensionResult(len(found), marginal, spreads)


def polytope_dimension(poly: Polytope, tol_dim: float = TOL_DIM) -> int:
    return polytope_dimension_report(poly, tol_dim).dim


def cell(game: Game, a: int) -> Polytope:
    """Outcome distributions under which action ``a`` is optimal."""
    L = game.losses
    others = [b for b in range(game.k) if b != a]
    rows = [L[a] - L[b] for b in others]
    A = np.vstack(rows + [-np.eye(game.d)]) if rows else -np.eye(game.d)
    bvec = np.zeros(A.shape[0])
    return Polytope(A, bvec, np.ones((1, game.d)), np.ones(1))


@dataclass
class ActionClassification:
    pareto: list[int]
    degenerate: list[int]
    dominated: list[int]
    duplicates: list[tuple[int, int]]
    dims: list[int]
    marginal: list[int]


def classify_actions(game: Game, tol_dim: float = TOL_DIM) -> ActionClassification:
    d = game.d
    pareto, degenerate, dominated, dims, marginal = [], [], [], [], []
    for a in range(game.k):
        rep = polytope_dimension_report(cell(game, a), tol_dim)
        dims.append(rep.dim)
        if rep.marginal:
            marginal.append(a)
        if rep.dim == d - 1:
            pareto.append(a)
        elif rep.dim >= 0:
            degenerate.append(a)
        else:
            dominated.append(a)
    duplicates = [
        (a, b) for a, b in itertools.combinations(range(game.k), 2)
        if np.max(np.abs(game.losses[a] - game.losses[b])) <= TOL_DUP
    ]
    return ActionClassification(pareto, degenerate, dominated, duplicates, dims, marginal)


@dataclass
class NeighbourGraph:
    vertices: list[int]
    edges: list[tuple[int, int]]
    marginal: list[tuple[int, int]] = field(default_factory=list)

    @property
    def adjacency(self) -> dict[int, list[int]]:
        adj = {v: [] for v in self.vertices}
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        for v in adj:
            adj[v].sort()
        return adj

    def is_connected(self) -> bool:
        if not self.vertices:
            return True
        adj = self.adjacency
        seen = {self.vertices[0]}
        stack = [self.vertices[0]]
        while stack:
            v = stack.pop()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(self.vertices)


def neighbour_graph(game: Game, classification: ActionClassification,
                    tol_dim: float = TOL_DIM) -> NeighbourGraph:
    edges, marginal = [], []
    pareto = classification.pareto
    for a, b in itertools.combinations(pareto, 2):
        rep = polytope_dimension_report(cell(game, a).intersect(cell(game, b)), tol_dim)
        if rep.marginal:
            marginal.append((a, b))
        if rep.dim == game.d - 2:
            edges.append((a, b))
    return NeighbourGraph(list(pareto), edges, marginal)


def _indicator_system(game: Game, actions: list[int]):
    cols = [pr for pr in game.pairs if pr[0] in actions]
    index = {pr: j for j, pr in enumerate(cols)}
    M = np.zeros((game.d, len(cols)))
    for x in range(game.d):
        for a in actions:
            M[x, index[(a, int(game.signals[a, x]))]] = 1.0
    return M, cols


@dataclass
class EdgeWitness:
    edge: tuple[int, int]
    solvable: bool
    residual: float
    support: list[int]
    w: dict[tuple[int, int], float]


def solve_edge_system(game: Game, edge: tuple[int, int], actions: list[int]) -> EdgeWitness:
    """Minimum-norm w over ``actions`` with sum_c w(c, Phi_cx) = L_ax - L_bx."""
    a, b = edge
    M, cols = _indicator_system(game, actions)
    y = game.losses[a] - game.losses[b]
    w, *_ = np.linalg.lstsq(M, y, rcond=None)
    resid = float(np.max(np.abs(M @ w - y))) if y.size else 0.0
    return EdgeWitness(edge, resid < TOL_OBS, resid, sorted(actions),
                       {pr: float(v) for pr, v in zip(cols, w)})


def local_support(game: Game, edge: tuple[int, int]) -> list[int]:
    """Actions whose loss row lies on the segment between rows of ``a`` and ``b``."""
    a, b = edge
    La, Lb = game.losses[a], game.losses[b]
    diff = La - Lb
    out = {a, b}
    nd = float(diff @ diff)
    for c in range(game.k):
        if c in out or nd == 0:
            continue
        alpha = float((game.losses[c] - Lb) @ diff) / nd
        if -1e-12 <= alpha <= 1 + 1e-12 and np.max(np.abs(alpha * La + (1 - alpha) * Lb - game.losses[c])) <= 1e-9:
            out.add(c)
    return sorted(out)


def check_local_observability(game: Game, graph: NeighbourGraph,
                              degenerate: bool = False) -> tuple[bool, dict]:
    """Pairwise estimability of each edge's loss difference.

    For degenerate games the rows of actions on the segment between the two
    endpoints may also be used.
    """
    witnesses = {}
    for e in graph.edges:
        acts = local_support(game, e) if degenerate else list(e)
        witnesses[e] = solve_edge_system(game, e, acts)
    return all(w.solvable for w in witnesses.values()), witnesses


def check_global_observability(game: Game, graph: NeighbourGraph) -> tuple[bool, dict]:
    witnesses = {e: solve_edge_system(game, e, list(range(game.k))) for e in graph.edges}
    return all(w.solvable for w in witnesses.values()), witnesses


@dataclass
class GameCategory:
    category: str  # Trivial | Easy | Hard | Hopeless
    locally_observable: bool
    globally_observable: bool
    degenerate: bool
    has_duplicates: bool


@dataclass
class Geometry:
    """Everything downstream modules need to know about a game's structure."""

    game: Game
    classification: ActionClassification
    graph: NeighbourGraph
    category: GameCategory
    local_witnesses: dict
    global_witnesses: dict
    trivial_actions: list[int]

    @property
    def pareto(self) -> list[int]:
        return self.classification.pareto

    @property
    def marginal(self) -> bool:
        return bool(self.classification.marginal or self.graph.marginal)

    def report(self) -> dict:
        c = self.classification
        return {
            "game": self.game.name,
            "k": self.game.k, "d": self.game.d, "m": self.game.m,
            "category": self.category.category,
            "locally_observable": self.category.locally_observable,
            "globally_observable": self.category.globally_observable,
            "degenerate": self.category.degenerate,
            "has_duplicates": self.category.has_duplicates,
            "pareto": [a + 1 for a in c.pareto],
            "degenerate_actions": [a + 1 for a in c.degenerate],
            "dominated_actions": [a + 1 for a in c.dominated],
            "duplicates": [[a + 1, b + 1] for a, b in c.duplicates],
            "cell_dims": c.dims,
            "edges": [[a + 1, b + 1] for a, b in self.graph.edges],
            "witnesses": {
                f"{a + 1}-{b + 1}": {
                    "local": bool(self.local_witnesses[(a, b)].solvable),
                    "local_residual": self.local_witnesses[(a, b)].residual,
                    "global_residual": self.global_witnesses[(a, b)].residual,
                    "w": {f"{c_ + 1}:{self.game.labels[s]}": v
                          for (c_, s), v in self.local_witnesses[(a, b)].w.items()},
                }
                for a, b in self.graph.edges
            },
            "marginal": {
                "cells": [a + 1 for a in c.marginal],
                "edges": [[a + 1, b + 1] for a, b in self.graph.marginal],
            },
        }


def trivial_actions(game: Game) -> list[int]:
    L = game.losses
    return [a for a in range(game.k) if np.all(L[a][None, :] <= L + TOL_DUP)]


def analyze(game: Game, tol_dim: float = TOL_DIM) -> Geometry:
    """Classify actions, build the neighbour graph and classify the game."""
    cls = classify_actions(game, tol_dim)
    graph = neighbour_graph(game, cls, tol_dim)
    degenerate = bool(cls.degenerate)
    loc, loc_w = check_local_observability(game, graph, degenerate=degenerate)
    glob, glob_w = check_global_observability(game, graph)
    triv = trivial_actions(game)
    if triv:
        cat = "Trivial"
    elif loc:
        cat = "Easy"
    elif glob:
        cat = "Hard"
    else:
        cat = "Hopeless"
    category = GameCategory(cat, loc, glob, degenerate, bool(cls.duplicates))
    return Geometry(game, cls, graph, category, loc_w, glob_w, triv)


def classify_game(game: Game) -> GameCategory:
    return analyze(game).category
