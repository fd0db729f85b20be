"""Per-round exploration programs and their analytic witnesses.

Given a proposal q (supported on the Pareto actions) and a learning rate,
the programs choose a sampling distribution p and an estimation function G
trading off excess loss, estimation bias and the exponential-weights
stability term. ``ExplorationSolver`` holds the per-game state (program
templates, estimators, witness trees) so that repeated solves are cheap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .conic import ConicResult, Template, solve_conic
from .estimation import (
    EstimationError,
    EstimationFunction,
    Estimators,
    bandit_estimator,
    build_estimators,
    chain_estimator,
    full_info_estimator,
    greedy_in_tree,
)
from .game import Game
from .geometry import Geometry, analyze

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass
class SolverSettings:
    tol_solver: float = 1e-6
    max_iter: int = 200
    eps: float | None = None  # floor on p; None means eta**2
    path: str = "socp"  # "socp" | "exact"
    witnesses: bool = True

    def __post_init__(self):
        if self.tol_solver <= 0 or self.max_iter <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.path not in ("socp", "exact"):
            raise ValueError(f"unknown path {self.path!r}")

    def floor(self, eta: float, k: int) -> float:
        eps = eta ** 2 if self.eps is None else self.eps
        # p >= eps must leave room on the simplex
        return min(eps, 1.0 / (2 * k))


def psi(q, z) -> float:
    """<q, exp(-z) + z - 1>."""
    q = np.asarray(q, dtype=float)
    z = np.asarray(z, dtype=float)
    return float(q @ (np.expm1(-z) + z))


def outcome_sums(game: Game, G: EstimationFunction) -> np.ndarray:
    """(d, k) array of sum_a G(a, Phi_ax)."""
    return G.G[game.pair_of].sum(axis=0)


def bias(q, G: EstimationFunction, x: int, pareto, game: Game) -> float:
    q = np.asarray(q, dtype=float)
    S = outcome_sums(game, G)[x]
    L = game.losses
    pareto = list(pareto)
    return float(q @ (L[:, x] - S) + np.max(S[pareto] - L[pareto, x]))


def _stability(q, eta, p, Gx) -> np.ndarray:
    """(1/eta^2) sum_a p_a Psi_q(eta G(a, Phi_ax) / p_a) for every x.

    ``Gx`` has shape (k, d, k). Returns +inf where some p_a = 0 carries a
    non-zero estimate.
    """
    qmask = q > 0
    if np.all(p > 0):
        z = eta * Gx[:, :, qmask] / p[:, None, None]
        with np.errstate(over="ignore", invalid="ignore"):
            terms = (np.expm1(-z) + z) @ q[qmask]  # (k, d)
        return (p @ terms) / eta ** 2
    pos = p > 0
    out = np.zeros(Gx.shape[1])
    bad = np.any(np.abs(Gx[~pos][:, :, qmask]) > 0, axis=(0, 2))
    out[bad] = np.inf
    if np.any(pos):
        z = eta * Gx[pos][:, :, qmask] / p[pos][:, None, None]
        with np.errstate(over="ignore", invalid="ignore"):
            terms = (np.expm1(-z) + z) @ q[qmask]
        out = out + (p[pos] @ terms) / eta ** 2
    return out


def _linear_part(q, p, G: EstimationFunction, game: Game, pareto) -> np.ndarray:
    """(p - q)^T L e_x + bias_q(G; x) for every x."""
    S = outcome_sums(game, G)
    L = game.losses
    pareto = list(pareto)
    return p @ L - S @ q + np.max(S[:, pareto] - L[pareto].T, axis=1)


def objective_terms(q, eta, p, G: EstimationFunction, game: Game, pareto) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    Gx = G.G[game.pair_of]
    return _linear_part(q, p, G, game, pareto) / eta + _stability(q, eta, p, Gx)


def objective_exact(q, eta, p, G: EstimationFunction, game: Game, pareto) -> float:
    """Exact exploration objective (max over outcomes); +inf when undefined."""
    return float(np.max(objective_terms(q, eta, p, G, game, pareto)))


def objective_batch(q, eta, ps, Gs, game: Game, pareto) -> np.ndarray:
    """objective_exact for several candidates at once."""
    P = np.asarray(ps, dtype=float)
    if np.any(P <= 0):
        return np.array([objective_exact(q, eta, p, G, game, pareto) for p, G in zip(ps, Gs)])
    q = np.asarray(q, dtype=float)
    pareto = list(pareto)
    L = game.losses
    Gx = np.stack([G.G for G in Gs])[:, game.pair_of]  # (C, a, x, comp)
    S = Gx.sum(axis=1)  # (C, x, comp)
    lin = P @ L - S @ q + np.max(S[:, :, pareto] - L[pareto].T[None], axis=2)
    qm = q > 0
    z = eta * Gx[..., qm] / P[:, :, None, None]
    with np.errstate(over="ignore", invalid="ignore"):
        terms = (np.expm1(-z) + z) @ q[qm]  # (C, a, x)
    stab = np.einsum("ca,cax->cx", P, terms) / eta ** 2
    return np.max(lin / eta + stab, axis=1)


def objective_socp(q, eta, p, G: EstimationFunction, game: Game, pareto) -> float:
    """Objective with the stability term replaced by its quadratic bound."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    Gx = G.G[game.pair_of]  # (k, d, k)
    with np.errstate(divide="ignore", invalid="ignore"):
        quad = ((Gx ** 2) @ q) / p[:, None]  # (k, d)
    quad = np.where(np.isnan(quad), 0.0, quad)
    return float(np.max(_linear_part(q, p, G, game, pareto) / eta + quad.sum(axis=0)))


def hedge_shift_constant(q, eta: float, sigma) -> float:
    """(1/eta) log <q, exp(-eta sigma)>."""
    q = np.asarray(q, dtype=float)
    s = np.asarray(sigma, dtype=float)
    z = -eta * s
    zmax = np.max(z[q > 0])
    return float((zmax + np.log(q @ np.exp(z - zmax))) / eta)


@dataclass
class ExplorationSolution:
    p: np.ndarray
    G: EstimationFunction
    value: float  # exact objective at (p, G)
    witness_source: str
    solver_value: float | None = None  # raw program optimum reported by the solver
    eps: float = 0.0
    residuals: dict = field(default_factory=dict)
    candidates: dict = field(default_factory=dict)
    warning: str | None = None
    _socp: tuple | None = field(default=None, repr=False)

    @property
    def socp_value(self) -> float:
        """Objective with the quadratic stability bound, at the returned (p, G)."""
        q, eta, game, pareto = self._socp
        return objective_socp(q, eta, self.p, self.G, game, pareto)


@dataclass
class HpSolution:
    p: np.ndarray
    G: EstimationFunction
    lam: float
    value: float
    source: str = "solver"
    stability: float = 0.0
    trace: list = field(default_factory=list)
    moment_violation: float = 0.0
    range_violation: float = 0.0
    warning: str | None = None


def _project_p(p: np.ndarray, eps: float) -> tuple[np.ndarray, float]:
    raw = p.copy()
    p = np.maximum(p, eps)
    p[np.argmax(p)] += 1.0 - p.sum()
    return p, float(np.max(np.abs(p - raw)))


class ExplorationSolver:
    """Per-game solver for the exploration programs.

    Holds compiled program templates, the game's estimators and the greedy
    trees used by the water-transfer witness. Instances are not thread-safe
    only in the sense that template caches are filled lazily; use one per
    thread.
    """

    def __init__(self, game: Game, geometry: Geometry | None = None,
                 settings: SolverSettings | None = None, estimators: Estimators | None = None):
        self.game = game
        self.geom = geometry if geometry is not None else analyze(game)
        self.settings = settings or SolverSettings()
        self.pareto = list(self.geom.pareto)
        self.est = estimators if estimators is not None else build_estimators(self.geom)
        self._templates: dict[str, object] = {}
        self._water: list | None = None
        self.is_bandit = game.signal_reveals_own_loss()
        self.is_full = game.signal_reveals_column()
        self._G_bandit = bandit_estimator(game) if self.is_bandit else None

    # ----- program templates -------------------------------------------------

    def _template(self, kind: str):
        if kind not in self._templates:
            build = {"socp": self._build_socp, "exact": self._build_exact, "hp": self._build_hp}[kind]
            self._templates[kind] = build()
        return self._templates[kind]

    def _common_vars(self, t: Template):
        game = self.game
        nP = len(self.pareto)
        p = t.var(game.k)
        G = t.var(len(game.pairs) * nP).reshape(len(game.pairs), nP)
        return p, G

    def _build_socp(self):
        game, pareto = self.game, self.pareto
        L = game.losses
        t = Template()
        p, G = self._common_vars(t)
        s = t.var(len(game.pairs))
        m = t.var(game.d)
        tt = t.var(1)[0]
        t.row([(p[a], 1.0, "one") for a in range(game.k)], rhs=1.0)
        t.cone("zero", 1)
        for a in range(game.k):
            t.row([(p[a], -1.0, "one")], rhs=-1.0, rhs_slot="eps")
        for r, (a, _) in enumerate(game.pairs):
            for j in range(len(pareto)):
                t.row([(G[r, j], -1.0, "one"), (p[a], -1.0, "1/eta")])
        for x in range(game.d):
            for j, c in enumerate(pareto):
                ent = [(G[game.pair_of[a, x], j], 1.0, "one") for a in range(game.k)]
                t.row(ent + [(m[x], -1.0, "one")], rhs=L[c, x])
        for x in range(game.d):
            ent = [(p[a], L[a, x], "1/eta") for a in range(game.k)]
            for a in range(game.k):
                r = game.pair_of[a, x]
                ent += [(G[r, j], -1.0, f"q{b}/eta") for j, b in enumerate(pareto)]
                ent.append((s[r], 1.0, "one"))
            ent += [(m[x], 1.0, "1/eta"), (tt, -1.0, "one")]
            t.row(ent)
        t.cone("nonneg", game.k + len(game.pairs) * len(pareto) + game.d * len(pareto) + game.d)
        for r, (a, _) in enumerate(game.pairs):
            t.row([(s[r], -1.0, "one"), (p[a], -1.0, "one")])
            t.row([(s[r], -1.0, "one"), (p[a], 1.0, "one")])
            for j, b in enumerate(pareto):
                t.row([(G[r, j], -1.0, f"2sqrt(q{b})")])
            t.cone("soc", 2 + len(pareto))
        t.objective(tt, 1.0)
        return t.compile(), (p, G)

    def _build_exact(self):
        game, pareto = self.game, self.pareto
        L = game.losses
        t = Template()
        p, G = self._common_vars(t)
        u = t.var(len(game.pairs) * len(pareto)).reshape(len(game.pairs), len(pareto))
        m = t.var(game.d)
        tt = t.var(1)[0]
        t.row([(p[a], 1.0, "one") for a in range(game.k)], rhs=1.0)
        t.cone("zero", 1)
        for a in range(game.k):
            t.row([(p[a], -1.0, "one")], rhs=-1.0, rhs_slot="eps")
        for x in range(game.d):
            for j, c in enumerate(pareto):
                ent = [(G[game.pair_of[a, x], j], 1.0, "one") for a in range(game.k)]
                t.row(ent + [(m[x], -1.0, "one")], rhs=L[c, x])
        for x in range(game.d):
            ent = [(p[a], L[a, x], "1/eta") for a in range(game.k)]
            for a in range(game.k):
                r = game.pair_of[a, x]
                ent += [(u[r, j], 1.0, f"q{b}/eta^2") for j, b in enumerate(pareto)]
            ent += [(m[x], 1.0, "1/eta"), (tt, -1.0, "one")]
            t.row(ent, rhs=1.0, rhs_slot="1/eta^2")
        t.cone("nonneg", game.k + game.d * len(pareto) + game.d)
        for r, (a, _) in enumerate(game.pairs):
            for j in range(len(pareto)):
                t.row([(G[r, j], 1.0, "eta")])
                t.row([(p[a], -1.0, "one")])
                t.row([(u[r, j], -1.0, "one")])
                t.cone("exp", 1)
        t.objective(tt, 1.0)
        return t.compile(), (p, G)

    def _build_hp(self):
        game, pareto = self.game, self.pareto
        L = game.losses
        nP = len(pareto)
        t = Template()
        p, G = self._common_vars(t)
        u = t.var(len(game.pairs) * nP).reshape(len(game.pairs), nP)
        v = t.var(game.d * nP * game.k).reshape(game.d, nP, game.k)
        tau = t.var(1)[0]
        t.row([(p[a], 1.0, "one") for a in range(game.k)], rhs=1.0)
        t.cone("zero", 1)
        for a in range(game.k):
            t.row([(p[a], -1.0, "one")], rhs=-1.0, rhs_slot="eps")
        for r, (a, _) in enumerate(game.pairs):
            for j in range(nP):
                t.row([(G[r, j], 1.0, "eta"), (p[a], -1.0, "one")])
                t.row([(G[r, j], -1.0, "eta"), (p[a], -1.0, "one")])
        for x in range(game.d):
            ent = []
            for a in range(game.k):
                r = game.pair_of[a, x]
                ent += [(u[r, j], 1.0, f"q{b}/eta^2") for j, b in enumerate(pareto)]
                ent += [(G[r, j], 1.0, f"q{b}/eta") for j, b in enumerate(pareto)]
            ent.append((tau, -1.0, "one"))
            t.row(ent, rhs=1.0, rhs_slot="1/eta^2")
        for x in range(game.d):
            for jc in range(nP):
                t.row([(v[x, jc, a], 1.0, "one") for a in range(game.k)], rhs=1.0, rhs_slot="exp(lam*eta^2)")
        t.cone("nonneg", game.k + 2 * len(game.pairs) * nP + game.d + game.d * nP)
        for r, (a, _) in enumerate(game.pairs):
            for j in range(nP):
                t.row([(G[r, j], 1.0, "eta")])
                t.row([(p[a], -1.0, "one")])
                t.row([(u[r, j], -1.0, "one")])
                t.cone("exp", 1)
        for x in range(game.d):
            for jc, c in enumerate(pareto):
                for a in range(game.k):
                    r = game.pair_of[a, x]
                    ent = [(p[a], -(L[a, x] - L[c, x]), "eta")]
                    for j, b in enumerate(pareto):
                        ent.append((G[r, j], 1.0, f"eta*(q{b}-1)" if b == c else f"eta*q{b}"))
                    t.row(ent)
                    t.row([(p[a], -1.0, "one")])
                    t.row([(v[x, jc, a], -1.0, "one")])
                    t.cone("exp", 1)
        t.objective(tau, 1.0)
        return t.compile(), (p, G)

    def _slot_values(self, q, eta, eps, lam=None) -> dict:
        vals = {"1/eta": 1.0 / eta, "eta": eta, "eta^2": eta ** 2, "1/eta^2": 1.0 / eta ** 2, "eps": eps}
        for b in self.pareto:
            qb = float(q[b])
            vals[f"q{b}"] = qb
            vals[f"q{b}/eta"] = qb / eta
            vals[f"q{b}/eta^2"] = qb / eta ** 2
            vals[f"2sqrt(q{b})"] = 2.0 * math.sqrt(qb)
            vals[f"eta*q{b}"] = eta * qb
            vals[f"eta*(q{b}-1)"] = eta * (qb - 1.0)
        if lam is not None:
            vals["exp(lam*eta^2)"] = math.exp(lam * eta ** 2)
        return vals

    def _unpack(self, res: ConicResult, idx) -> tuple[np.ndarray, EstimationFunction]:
        p_idx, G_idx = idx
        p = res.x[p_idx].copy()
        G = np.zeros((len(self.game.pairs), self.game.k))
        G[:, self.pareto] = res.x[G_idx]
        return p, EstimationFunction(G, unbiased=False, source="solver")

    # ----- checks -------------------------------------------------------------

    def check_q(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float).reshape(-1)
        if q.size != self.game.k:
            raise ValueError(f"q has dimension {q.size}, expected {self.game.k}")
        if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-9:
            raise ValueError("q is not a probability vector")
        off = [a for a in range(self.game.k) if a not in self.pareto and q[a] > 0]
        if off:
            raise ValueError(f"q must vanish off the Pareto actions, has mass on {off}")
        return q

    # ----- witnesses ------------------------------------------------------------

    def _water_bank(self):
        """Greedy trees (and chained local G) for a fixed set of outcome laws."""
        if self._water is None:
            self._water = []
            cat = self.geom.category
            if cat.locally_observable and not cat.degenerate and self.est.local:
                game = self.game
                nus = [np.eye(game.d)[x] for x in range(game.d)] + [np.full(game.d, 1.0 / game.d)]
                seen = set()
                for nu in nus:
                    try:
                        tree = greedy_in_tree(game, self.geom.graph, nu)
                    except EstimationError:
                        continue
                    key = tuple(tree.edges)
                    if key in seen:
                        continue
                    seen.add(key)
                    G = chain_estimator(game, tree, self.est.local)
                    D = np.zeros((game.k, game.k))
                    for a in tree.vertices:
                        for b in tree.desc(a):
                            D[a, b] = 1.0 / tree.depth[b]
                    self._water.append((tree, G, D))
        return self._water

    def witnesses(self, q, eta) -> list[tuple[str, np.ndarray, EstimationFunction]]:
        """Analytic (p, G) candidates applicable to this game."""
        game = self.game
        k = game.k
        out = []
        if self.is_full:
            out.append(("analytic-fullinfo", q.copy(), full_info_estimator(game, q)))
        if self.is_bandit:
            out.append(("analytic-bandit", q.copy(), self._G_bandit))
        if self.est.G_global is not None and self.est.beta > 0:
            gamma = k * self.est.beta * math.sqrt(eta)
            if gamma <= 1:
                p = (1 - gamma) * q + gamma / k
                out.append(("analytic-global", p, self.est.G_global))
        for tree, G, D in self._water_bank():
            beta = max(G.sup_norm, k * game.m / 2)
            gamma = eta * k * beta
            if gamma <= 1:
                r = D @ q
                p = (1 - gamma) * r + gamma / k
                out.append(("analytic-water", p, G))
        return out

    # ----- main programs ----------------------------------------------------------

    def solve(self, q, eta: float, settings: SolverSettings | None = None) -> ExplorationSolution:
        """Solve the exploration program at (q, eta) and keep the best candidate."""
        st = settings or self.settings
        if not eta > 0:
            raise ValueError("eta must be positive")
        q = self.check_q(q)
        game = self.game
        eps = st.floor(eta, game.k)
        cands = []
        warning = None
        solver_value = None
        resid: dict = {}
        tmpl, idx = self._template(st.path)
        prog = tmpl.program(self._slot_values(q, eta, eps))
        res = solve_conic(prog, tol=st.tol_solver, max_iter=st.max_iter)
        if res.ok:
            p, G = self._unpack(res, idx)
            p, p_fix = _project_p(p, eps)
            lower = -p[game.pair_action] / eta
            G_fix = float(np.max(np.maximum(lower[:, None] - G.G, 0.0)))
            if st.path == "socp":
                G.G = np.maximum(G.G, lower[:, None])
            resid = {"conic": res.primal_residual, "gap": res.gap, "p_projection": p_fix,
                     "G_clip": G_fix, "iterations": res.iterations, "status": res.status}
            solver_value = float(res.value)
            cands.append(("solver", p, G))
        else:
            warning = f"solver status {res.status}"
            log.warning("exploration solve failed at eta=%g: %s", eta, res.status)
        if st.witnesses or not cands:
            cands += self.witnesses(q, eta)
        if not cands:
            raise SolverError(f"exploration program failed ({warning}) and no witness applies")
        values = objective_batch(q, eta, [c[1] for c in cands], [c[2] for c in cands], game, self.pareto)
        candidates: dict[str, float] = {}
        best = None
        for (name, p, G), val in zip(cands, values):
            if name not in candidates or val < candidates[name]:
                candidates[name] = float(val)
            if best is None or val < best[3] - 1e-12:
                best = (name, p, G, float(val))
        name, p, G, val = best
        return ExplorationSolution(
            p=p, G=G, value=val, witness_source=name,
            solver_value=solver_value, eps=eps, residuals=resid,
            candidates=candidates, warning=warning, _socp=(q, eta, game, self.pareto),
        )

    # ----- high-probability program -------------------------------------------------

    def hp_stability(self, q, eta, p, G: EstimationFunction) -> float:
        """(2/eta^2) max_x sum_a p_a Psi_q(eta G(a, Phi_ax) / p_a)."""
        return float(2.0 * np.max(_stability(q, eta, p, G.G[self.game.pair_of])))

    def hp_moment(self, q, eta, p, G: EstimationFunction) -> float:
        """max over x and c in Pi of sum_a p_a exp(eta (L_ax - L_cx - <q - e_c, G>/p_a))."""
        game = self.game
        L = game.losses
        Gx = G.G[game.pair_of]  # (a, x, comp)
        qG = Gx @ q  # (a, x)
        worst = 0.0
        for c in self.pareto:
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                inner = (qG - Gx[:, :, c]) / p[:, None]
            inner = np.where(p[:, None] > 0, inner, 0.0)
            expo = eta * (L - L[c][None, :] - inner)
            with np.errstate(over="ignore"):
                tot = (p[:, None] * np.exp(expo)).sum(axis=0)
            worst = max(worst, float(np.max(tot)))
        return worst

    def _hp_finalize(self, q, eta, p, G, lam, source, eps) -> HpSolution:
        p, _ = _project_p(p, eps) if source == "solver" else (p, 0.0)
        if source == "solver":
            bound = p[self.game.pair_action][:, None] / eta
            G.G = np.clip(G.G, -bound, bound)
        mom = self.hp_moment(q, eta, p, G)
        lam_eff = max(lam, math.log(mom) / eta ** 2) if mom > 0 else lam
        lam_eff = max(lam_eff, 0.0)
        stab = self.hp_stability(q, eta, p, G)
        rng_v = float(np.max(eta * np.abs(G.G[:, self.pareto]) - p[self.game.pair_action][:, None]))
        return HpSolution(p, G, lam_eff, lam_eff + stab, source=source, stability=stab,
                          moment_violation=max(0.0, mom - math.exp(lam * eta ** 2)),
                          range_violation=max(0.0, rng_v))

    def solve_hp_fixed(self, q, eta, lam, settings=None) -> HpSolution | None:
        """Solve the convex program with lambda fixed; None when infeasible."""
        st = settings or self.settings
        eps = st.floor(eta, self.game.k)
        tmpl, idx = self._template("hp")
        prog = tmpl.program(self._slot_values(q, eta, eps, lam=lam))
        res = solve_conic(prog, tol=1e-7, max_iter=st.max_iter)
        if not res.ok:
            return None
        p, G = self._unpack(res, idx)
        return self._hp_finalize(q, eta, p, G, lam, "solver", eps)

    def hp_witnesses(self, q, eta) -> list[HpSolution]:
        game = self.game
        k = game.k
        out = []
        cands = []
        if self.is_full:
            cands.append(("analytic-fullinfo", q.copy(), full_info_estimator(game, q), np.ones(k)))
        if self.is_bandit and 2 * k * eta <= 1:
            gamma = 2 * k * eta
            p = (1 - gamma) * q + gamma / k
            cands.append(("analytic-bandit", p, self._G_bandit, 1.0 / p))
        if self.est.G_global is not None:
            G = self.est.G_global
            beta = G.sup_norm
            gamma = min(1.0, 2 * k * eta * beta) if beta > 0 else 0.0
            p = (1 - gamma) * q + gamma / k
            phi = _min_phi(game, p, G, self.pareto)
            if phi is not None:
                cands.append(("analytic-global", p, G, phi))
        for name, p, G, phi in cands:
            try:
                out.append(hp_analytic_witness(q, eta, p, G, phi, game, self.pareto, solver=self, source=name))
            except ValueError:
                continue
        return out

    def solve_hp(self, q, eta: float, lam_hint: float | None = None,
                 settings: SolverSettings | None = None, max_probes: int = 80) -> HpSolution:
        """Root search on lambda for the high-probability program.

        With g(lambda) the stability part of the fixed-lambda optimum, the
        search finds lambda close to the root of g(lambda) = lambda, where
        the fixed-lambda value is about 2 lambda and hence within a factor two
        of the optimum. Because g is non-increasing, an evaluated point b
        with g(b) <= b also proves root >= g(b); secant steps are nudged just
        above the estimate so both bracket ends move. The analytic witnesses
        are kept as candidates.
        """
        st = settings or self.settings
        if not 0 < eta < 0.5:
            raise ValueError("eta must lie in (0, 1/2)")
        q = self.check_q(q)
        trace: list[tuple[float, float]] = []

        def probe(lam):
            sol = self.solve_hp_fixed(q, eta, lam, st)
            trace.append((lam, lam + sol.stability if sol is not None else math.inf))
            return sol

        wits = self.hp_witnesses(q, eta)
        hi_sol = None
        if lam_hint is not None and lam_hint >= 0:
            x = lam_hint * (1 + 1e-3) + 1e-7
            s = probe(x)
            if s is not None and s.stability <= x:
                hi, hi_sol = x, s
        if hi_sol is None:
            if wits:
                w = min(wits, key=lambda s: s.value)
                hi = max(w.lam, w.stability, 1e-6)
            else:
                hi = 1.0
            for _ in range(60):
                s = probe(hi)
                if s is not None and s.stability <= hi:
                    hi_sol = s
                    break
                hi *= 2
            else:
                raise SolverError(f"high-probability program infeasible up to lambda={hi:g}")
        lo = min(hi_sol.stability, hi)
        hi_pt = (hi, hi_sol.stability - hi)
        lo_pt = None
        hi_prev = None
        lo_tried = False
        warning = None
        while hi - lo >= 1e-6 * (1 + hi):
            if len(trace) >= max_probes:
                warning = f"lambda search stopped after {len(trace)} probes"
                break
            tol = 1e-6 * (1 + hi)
            if lo_pt is not None:
                (xa, fa), (xb, fb) = lo_pt, hi_pt
                r = xa - fa * (xb - xa) / (fb - fa) if fb != fa else 0.5 * (xa + xb)
                slope = ((fb + xb) - (fa + xa)) / (xb - xa)
            elif hi_prev is not None and hi_prev[1] != hi_pt[1]:
                # extrapolate from the two most recent upper points
                (xa, fa), (xb, fb) = hi_prev, hi_pt
                r = xb - fb * (xb - xa) / (fb - fa)
                slope = -1.0
                if not lo < r < hi:
                    r = 0.5 * (lo + hi)
            elif not lo_tried:
                r, slope = lo, -1.0
            else:
                r, slope = 0.5 * (lo + hi), -1.0
            delta = 0.25 * tol / (1 + abs(slope)) if lo_pt is not None else 0.0
            x = min(max(r + delta, lo + delta), hi - delta)
            if not (lo < x < hi or (x == lo and not lo_tried)):
                x = 0.5 * (lo + hi)
            lo_tried = True
            s = probe(x)
            if s is None:
                lo = x
                continue
            phi = s.stability - x
            if phi <= 0:
                hi_prev = hi_pt
                hi, hi_sol, hi_pt = x, s, (x, phi)
                lo = max(lo, s.stability)
            else:
                lo, lo_pt = x, (x, phi)
        pool = [hi_sol] + wits
        out = min(pool, key=lambda s: s.value)
        out.trace = sorted(trace)
        out.warning = warning
        return out


def _min_phi(game: Game, p, G: EstimationFunction, pareto) -> np.ndarray | None:
    """Smallest phi >= sum_a G(a, Phi_ax)^2 / p_a over all x (Pareto components)."""
    if np.any(p <= 0):
        return None
    Gx = G.G[game.pair_of]  # (a, x, comp)
    tot = ((Gx ** 2) / p[:, None, None]).sum(axis=0)  # (x, comp)
    phi = np.zeros(game.k)
    phi[pareto] = tot[:, pareto].max(axis=0)
    return phi


def hp_analytic_witness(q, eta, p, G: EstimationFunction, phi, game: Game, pareto,
                        solver: ExplorationSolver | None = None, source: str = "analytic") -> HpSolution:
    """Biased shift G' = G - 3 eta p_a phi with the matching lambda.

    Checks the witness conditions and raises ValueError if one fails.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    phi = np.asarray(phi, dtype=float)
    pareto = list(pareto)
    tol = 1e-12
    if not 0 < eta < 0.5:
        raise ValueError("eta must lie in (0, 1/2)")
    if np.any(phi < 0):
        raise ValueError("phi must be non-negative")
    if np.any(p <= 0):
        raise ValueError("p must be strictly positive")
    Gx = G.G[game.pair_of][:, :, pareto]  # (a, x, comp)
    if np.max(eta * np.abs(Gx) / p[:, None, None]) > 0.5 + tol:
        raise ValueError("range condition eta |G| / p <= 1/2 fails")
    if np.any(((Gx ** 2) / p[:, None, None]).sum(axis=0) > phi[pareto][None, :] + tol):
        raise ValueError("second-moment condition fails")
    if np.any(eta ** 2 * phi[pareto] > 0.5 + tol):
        raise ValueError("eta^2 phi <= 1/2 fails")
    from .estimation import verify_unbiased

    if not verify_unbiased(game, G, pareto).ok(1e-8):
        raise ValueError("G is not unbiased")
    shift = np.zeros(game.k)
    shift[pareto] = phi[pareto]
    Gp = G.G - 3 * eta * p[game.pair_action][:, None] * shift[None, :]
    Gs = EstimationFunction(Gp, unbiased=False, source=source)
    lam = 1 + 6 * float(q @ phi) + float(np.max(p @ game.losses - q @ game.losses)) / eta
    lam = max(lam, 0.0)
    if solver is None:
        solver = ExplorationSolver(game)
    sol = solver._hp_finalize(q, eta, p, Gs, lam, source, 0.0)
    return sol


def solve_exploration(q, eta: float, game: Game, geometry: Geometry | None = None,
                      settings: SolverSettings | None = None) -> ExplorationSolution:
    return ExplorationSolver(game, geometry, settings).solve(q, eta)


def solve_hp(q, eta: float, game: Game, geometry: Geometry | None = None,
             settings: SolverSettings | None = None) -> HpSolution:
    return ExplorationSolver(game, geometry, settings).solve_hp(q, eta)
