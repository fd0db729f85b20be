"""Exponential-weights learners for partial monitoring and two baselines.

A policy exposes ``propose() -> P_t`` and ``update(action, signal_id)``.
Everything a learner touches (game, geometry, estimators, solver) is built
once in the constructor; the per-round state lives in ``LearnerState``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import c_game
from .game import Game
from .geometry import Geometry, analyze
from .optimizer import ExplorationSolver, SolverSettings

RNG_FAMILY = "numpy.PCG64"


class LearnerError(RuntimeError):
    pass


def exp_weights_distribution(cumulative, eta: float, pareto) -> np.ndarray:
    """Softmax of -eta * cumulative over ``pareto``; zero elsewhere."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    cum = np.asarray(cumulative, dtype=float)
    idx = np.asarray(list(pareto), dtype=int)
    z = -eta * cum[idx]
    z -= z.max()
    w = np.exp(z)
    out = np.zeros(cum.size)
    out[idx] = w / w.sum()
    return out


def sample_index(p: np.ndarray, u: float) -> int:
    """Inverse-CDF draw from ``p`` using a uniform ``u`` in [0, 1)."""
    cdf = np.cumsum(p)
    a = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    a = min(a, p.size - 1)
    while p[a] <= 0:  # only reachable through round-off at the top end
        a -= 1
    return a


@dataclass
class LearnerState:
    cumulative: np.ndarray
    t: int = 0
    eta: float = 0.0
    sum_V: float = 0.0
    B: float | None = None
    delta: float | None = None
    rng: np.random.Generator | None = None


@dataclass
class StepOutcome:
    action: int
    signal: int
    y_hat: np.ndarray
    V: float
    Q: np.ndarray
    P: np.ndarray
    eta: float
    diagnostics: dict = field(default_factory=dict)


def default_B(geom: Geometry, est=None) -> float:
    """Learning-rate floor parameter: 2 m k^2 (locally observable) or c_G^2."""
    game = geom.game
    cat = geom.category
    if cat.category in ("Easy", "Trivial"):
        return 2.0 * game.m * game.k ** 2
    if cat.category == "Hard":
        if est is None:
            from .estimation import build_estimators

            est = build_estimators(geom)
        return c_game(game, est) ** 2
    raise LearnerError("game is not globally observable")


class Policy:
    """Common bookkeeping: RNG, round counter and per-round history."""

    name = "policy"

    def __init__(self, game: Game, seed: int = 0, record: bool = True):
        self.game = game
        self.seed = seed
        self.record = record
        self.history: list[StepOutcome] = []
        self.state = LearnerState(cumulative=np.zeros(game.k), rng=np.random.default_rng(seed))
        self._P: np.ndarray | None = None

    def propose(self) -> np.ndarray:
        raise NotImplementedError

    def sample(self) -> int:
        if self._P is None:
            raise LearnerError("propose() must precede sample()")
        return sample_index(self._P, float(self.state.rng.random()))

    def update(self, action: int, signal: int) -> StepOutcome:
        raise NotImplementedError

    def _log(self, out: StepOutcome) -> StepOutcome:
        self.state.t += 1
        self._P = None
        if self.record:
            self.history.append(out)
        return out

    def metadata(self) -> dict:
        return {"policy": self.name, "seed": self.seed, "rng": RNG_FAMILY}


class ExplorationPolicy(Policy):
    """Exponential weights whose sampling law and estimator come from a per-round convex program.

    ``mode`` is "fixed" (constant eta), "adaptive" (eta_t from the running
    sum of solver values) or "hp" (high-probability program, fixed eta).
    """

    def __init__(self, game: Game, mode: str = "fixed", eta: float | None = None,
                 B: float | None = None, delta: float | None = None,
                 geometry: Geometry | None = None, settings: SolverSettings | None = None,
                 seed: int = 0, record: bool = True, solver: ExplorationSolver | None = None):
        super().__init__(game, seed, record)
        if mode not in ("fixed", "adaptive", "hp"):
            raise ValueError(f"unknown mode {mode!r}")
        self.mode = mode
        self.name = mode
        self.geom = geometry if geometry is not None else analyze(game)
        if not self.geom.category.globally_observable and self.geom.category.category != "Trivial":
            raise LearnerError(f"{self.geom.category.category} game: no exploration policy applies")
        self.solver = solver if solver is not None else ExplorationSolver(game, self.geom, settings)
        self.pareto = list(self.geom.pareto)
        st = self.state
        if mode == "adaptive":
            st.B = float(B) if B is not None else default_B(self.geom, self.solver.est)
            if st.B <= 0:
                raise ValueError("B must be positive")
            st.eta = self._adaptive_eta()
        else:
            if eta is None or not eta > 0:
                raise ValueError("eta must be positive")
            if mode == "hp" and not eta < 0.5:
                raise ValueError("eta must lie in (0, 1/2) for the high-probability learner")
            st.eta = float(eta)
            st.delta = delta
        self._sol = None
        self._Q = None
        self._lam = None

    def _adaptive_eta(self) -> float:
        st = self.state
        return min(1.0 / st.B, math.sqrt(math.log(self.game.k) / (1.0 + st.sum_V)))

    def propose(self) -> np.ndarray:
        st = self.state
        if self.mode == "adaptive":
            st.eta = min(st.eta, self._adaptive_eta()) if st.t else self._adaptive_eta()
        Q = exp_weights_distribution(st.cumulative, st.eta, self.pareto)
        if self.mode == "hp":
            sol = self.solver.solve_hp(Q, st.eta, lam_hint=self._lam)
            self._lam = sol.lam
        else:
            sol = self.solver.solve(Q, st.eta)
        self._sol, self._Q, self._P = sol, Q, sol.p
        return sol.p

    def update(self, action: int, signal: int) -> StepOutcome:
        if self._sol is None or self._P is None:
            raise LearnerError("propose() must precede update()")
        st = self.state
        sol, P = self._sol, self._P
        y = sol.G.value(self.game, action, signal) / P[action]
        if not np.all(np.isfinite(y)):
            raise LearnerError(f"non-finite loss estimate at round {st.t + 1}")
        st.cumulative[self.pareto] += y[self.pareto]
        V = max(0.0, float(sol.value))
        st.sum_V += V
        diag = {"source": getattr(sol, "witness_source", getattr(sol, "source", ""))}
        if self.mode == "hp":
            diag["lambda"] = sol.lam
        out = StepOutcome(action, signal, y, V, self._Q, P, st.eta, diag)
        self._sol = None
        return self._log(out)


class HedgePolicy(Policy):
    """Exponential weights on the revealed loss columns (full information)."""

    name = "hedge"

    def __init__(self, game: Game, eta: float, seed: int = 0, record: bool = True):
        super().__init__(game, seed, record)
        if not game.signal_reveals_column():
            raise LearnerError("Hedge needs a full-information game")
        if not eta > 0:
            raise ValueError("eta must be positive")
        self.state.eta = float(eta)
        self.columns = {}
        for a in range(game.k):
            for x in range(game.d):
                self.columns[(a, int(game.signals[a, x]))] = game.losses[:, x].copy()
        self.actions = list(range(game.k))

    def propose(self) -> np.ndarray:
        self._Q = exp_weights_distribution(self.state.cumulative, self.state.eta, self.actions)
        self._P = self._Q
        return self._P

    def update(self, action: int, signal: int) -> StepOutcome:
        y = self.columns[(action, signal)]
        self.state.cumulative += y
        return self._log(StepOutcome(action, signal, y.copy(), 0.0, self._Q, self._P, self.state.eta))


class Exp3Policy(Policy):
    """Importance-weighted exponential weights with uniform mixing (bandit)."""

    name = "exp3"

    def __init__(self, game: Game, eta: float, gamma: float = 0.0, seed: int = 0, record: bool = True):
        super().__init__(game, seed, record)
        if not game.signal_reveals_own_loss():
            raise LearnerError("Exp3 needs a game whose signals reveal the played action's loss")
        if not eta > 0 or not 0 <= gamma <= 1:
            raise ValueError("need eta > 0 and gamma in [0, 1]")
        self.state.eta = float(eta)
        self.gamma = float(gamma)
        self.own_loss = {}
        for a in range(game.k):
            for x in range(game.d):
                self.own_loss[(a, int(game.signals[a, x]))] = float(game.losses[a, x])
        self.actions = list(range(game.k))

    def propose(self) -> np.ndarray:
        k = self.game.k
        self._Q = exp_weights_distribution(self.state.cumulative, self.state.eta, self.actions)
        self._P = (1 - self.gamma) * self._Q + self.gamma / k
        return self._P

    def update(self, action: int, signal: int) -> StepOutcome:
        y = np.zeros(self.game.k)
        y[action] = self.own_loss[(action, signal)] / self._P[action]
        self.state.cumulative += y
        return self._log(StepOutcome(action, signal, y, 0.0, self._Q, self._P, self.state.eta))


def baseline_hedge(game: Game, eta: float, seed: int = 0, record: bool = True) -> HedgePolicy:
    return HedgePolicy(game, eta, seed, record)


def baseline_exp3(game: Game, eta: float, gamma: float = 0.0, seed: int = 0,
                  record: bool = True) -> Exp3Policy:
    return Exp3Policy(game, eta, gamma, seed, record)


def make_policy(game: Game, algo: str, *, eta: float | None = None, B: float | None = None,
                delta: float | None = None, gamma: float = 0.0, seed: int = 0,
                geometry: Geometry | None = None, settings: SolverSettings | None = None,
                solver: ExplorationSolver | None = None, record: bool = True) -> Policy:
    if algo in ("fixed", "adaptive", "hp"):
        return ExplorationPolicy(game, algo, eta=eta, B=B, delta=delta, geometry=geometry,
                                 settings=settings, seed=seed, record=record, solver=solver)
    if algo == "hedge":
        return HedgePolicy(game, eta if eta is not None else math.sqrt(8 * math.log(max(game.k, 2)) / 1000),
                           seed, record)
    if algo == "exp3":
        return Exp3Policy(game, eta if eta is not None else 0.05, gamma, seed, record)
    raise ValueError(f"unknown algorithm {algo!r}")


def exp_weights_gap(history: list[StepOutcome], k: int, pareto) -> dict[int, tuple[float, float]]:
    """Both sides of the exponential-weights inequality for every a* in Pi.

    lhs = sum_t <Q_t, y_t - y_t[a*]> and rhs = log(k)/eta_n + sum_t Psi_{Q_t}(eta_t y_t)/eta_t.
    """
    if not history:
        return {a: (0.0, 0.0) for a in pareto}
    Q = np.array([h.Q for h in history])
    Y = np.array([h.y_hat for h in history])
    eta = np.array([h.eta for h in history])
    Z = eta[:, None] * Y
    mask = Q > 0
    terms = np.where(mask, Q * (np.expm1(-np.where(mask, Z, 0.0)) + np.where(mask, Z, 0.0)), 0.0)
    stab = float((terms.sum(axis=1) / eta).sum())
    rhs = math.log(k) / eta[-1] + stab
    inner = (Q * np.where(mask, Y, 0.0)).sum(axis=1)
    return {a: (float((inner - Y[:, a]).sum()), rhs) for a in pareto}
