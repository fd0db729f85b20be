"""Adversaries, episodes, regret accounting, sweeps and CSV output."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .game import Game, as_probability, resolve_game
from .geometry import Geometry, analyze
from .learner import RNG_FAMILY, LearnerError, Policy, make_policy
from .optimizer import ExplorationSolver, SolverSettings

log = logging.getLogger(__name__)

TRACE_COLUMNS = ["t", "action", "outcome", "signal", "loss", "eta", "V", "regret"]
SWEEP_COLUMNS = ["mu", "c", "n", "algo", "reps", "mean_regret", "q25", "q75"]


class HarnessError(RuntimeError):
    pass


@dataclass
class Adversary:
    """Oblivious adversary: i.i.d. draws from ``mu`` or a fixed sequence."""

    kind: str  # "iid" | "fixed"
    mu: np.ndarray | None = None
    sequence: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind == "iid":
            if self.mu is None:
                raise ValueError("iid adversary needs mu")
            mu = as_probability(self.mu, tol=1e-9)
            self.mu = mu / mu.sum()
        elif self.kind == "fixed":
            if self.sequence is None:
                raise ValueError("fixed adversary needs a sequence")
            self.sequence = np.asarray(self.sequence, dtype=int)
        else:
            raise ValueError(f"unknown adversary kind {self.kind!r}")

    def materialize(self, n: int, d: int) -> np.ndarray:
        """The full outcome sequence, fixed before play starts."""
        if self.kind == "fixed":
            seq = self.sequence
            if seq.size < n:
                raise ValueError(f"fixed sequence has {seq.size} outcomes, need {n}")
            seq = seq[:n]
            if seq.size and (seq.min() < 0 or seq.max() >= d):
                raise ValueError(f"outcome indices must lie in [0, {d})")
            return seq.copy()
        if self.mu.size != d:
            raise ValueError(f"mu has dimension {self.mu.size}, game has {d} outcomes")
        rng = np.random.default_rng(self.seed)
        u = rng.random(n)
        cdf = np.cumsum(self.mu)
        seq = np.searchsorted(cdf, u * cdf[-1], side="right")
        return np.minimum(seq, d - 1)

    def describe(self) -> str:
        if self.kind == "iid":
            return "iid:" + ",".join(f"{v:.9g}" for v in self.mu)
        return f"fixed:{self.sequence.size}"


def parse_adversary(spec: str, seed: int = 0) -> Adversary:
    """``iid:<mu csv>`` or ``fixed:<file of outcome indices>``."""
    kind, _, rest = spec.partition(":")
    if kind == "iid":
        return Adversary("iid", mu=np.array([float(v) for v in rest.split(",")]), seed=seed)
    if kind == "fixed":
        text = Path(rest).read_text()
        vals = [int(v) for v in text.replace(",", " ").split()]
        return Adversary("fixed", sequence=np.array(vals, dtype=int))
    raise ValueError(f"bad adversary spec {spec!r}")


def _total(values: np.ndarray) -> float:
    # one summation routine for learner and comparators keeps R_n exact
    return float(np.sum(np.asarray(values, dtype=float)))


def action_totals(game: Game, outcomes: np.ndarray) -> np.ndarray:
    return np.array([_total(game.losses[a, outcomes]) for a in range(game.k)])


def best_fixed_action(game: Game, outcomes: np.ndarray, pareto=None) -> tuple[int, np.ndarray]:
    """a* minimising cumulative loss; ties go to Pi first, then lowest index."""
    totals = action_totals(game, outcomes)
    best = totals.min()
    tied = [a for a in range(game.k) if totals[a] == best]
    if pareto is not None:
        in_p = [a for a in tied if a in set(pareto)]
        tied = in_p or tied
    return tied[0], totals


@dataclass
class RegretTrace:
    actions: np.ndarray
    outcomes: np.ndarray
    signals: np.ndarray
    losses: np.ndarray
    eta: np.ndarray
    V: np.ndarray
    regret: np.ndarray  # R_t against the best fixed action over the whole horizon
    a_star: int
    R_n: float
    metadata: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def n(self) -> int:
        return int(self.actions.size)

    def recompute_regret(self, game: Game) -> float:
        learner = _total(game.losses[self.actions, self.outcomes])
        return learner - float(action_totals(game, self.outcomes).min())

    def rows(self, game: Game) -> list[list]:
        return [
            [t + 1, int(self.actions[t]) + 1, int(self.outcomes[t]) + 1,
             game.labels[int(self.signals[t])], float(self.losses[t]), float(self.eta[t]),
             float(self.V[t]), float(self.regret[t])]
            for t in range(self.n)
        ]


def run_episode(game: Game, policy: Policy, adversary: Adversary, n: int, seed: int | None = None,
                pareto=None) -> RegretTrace:
    """Play ``n`` rounds; the policy only ever sees the signal."""
    if n < 0:
        raise ValueError("n must be non-negative")
    outcomes = adversary.materialize(n, game.d)
    t0 = time.perf_counter()
    actions = np.zeros(n, dtype=int)
    signals = np.zeros(n, dtype=int)
    etas = np.zeros(n)
    Vs = np.zeros(n)
    error = None
    done = 0
    for t in range(n):
        try:
            policy.propose()
            a = policy.sample()
            x = int(outcomes[t])
            sig = int(game.signals[a, x])
            step = policy.update(a, sig)
        except Exception as exc:  # policy abort: keep the partial trace
            error = f"round {t + 1}: {type(exc).__name__}: {exc}"
            log.error("episode aborted at %s", error)
            break
        actions[t], signals[t], etas[t], Vs[t] = a, sig, step.eta, step.V
        done = t + 1
    actions, signals, etas, Vs = actions[:done], signals[:done], etas[:done], Vs[:done]
    played = outcomes[:done]
    a_star, totals = best_fixed_action(game, played, pareto)
    inc = game.losses[actions, played]
    regret = np.cumsum(inc) - np.cumsum(game.losses[a_star, played])
    R_n = _total(inc) - float(totals[a_star]) if done else 0.0
    meta = dict(policy.metadata())
    meta.update({"seed": seed if seed is not None else policy.seed, "adversary": adversary.describe(),
                 "n": n, "wall_time": time.perf_counter() - t0})
    return RegretTrace(actions, played, signals, inc, etas, Vs, regret, a_star, R_n, meta, error)


def theoretical_bound(category: str, k: int, m: int, n: int, c_G: float | None = None,
                      kind: str | None = None) -> float:
    """Closed-form regret bound; ``kind`` picks the bandit/full-info forms."""
    if n == 0:
        return 0.0
    if category == "Hopeless":
        raise HarnessError("hopeless games admit no sublinear regret bound")
    if kind == "full":
        return math.sqrt(2 * n * math.log(k))
    if kind == "bandit":
        return math.sqrt(2 * n * k * math.log(k))
    if category in ("Easy", "Trivial"):
        return 2 * k ** 1.5 * m * math.sqrt(3 * n * math.log(k))
    if category == "Hard":
        if c_G is None:
            raise ValueError("hard-game bound needs c_G")
        return 3 * (c_G * n / 2) ** (2 / 3) * math.log(k) ** (1 / 3)
    raise ValueError(f"unknown category {category!r}")


def game_bound(game: Game, n: int, geom: Geometry | None = None) -> dict:
    from .estimation import build_estimators, c_game

    geom = geom if geom is not None else analyze(game)
    cat = geom.category.category
    out = {"category": cat, "k": game.k, "m": game.m, "n": n}
    if cat == "Hopeless":
        out["bound"] = None
        return out
    est = build_estimators(geom)
    cG = c_game(game, est)
    out["c_G"] = cG
    out["bound"] = theoretical_bound(cat, game.k, game.m, n, cG)
    if game.signal_reveals_column():
        out["bound_full_info"] = theoretical_bound(cat, game.k, game.m, n, kind="full")
    if game.signal_reveals_own_loss():
        out["bound_bandit"] = theoretical_bound(cat, game.k, game.m, n, kind="bandit")
    return out


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return "" if v is None else str(v)


def emit_csv(header: list[str], rows: list[list], path: str | Path | None = None) -> str:
    """Header plus rows, floats with 9 significant digits; returns the text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def emit_trace_csv(trace: RegretTrace, game: Game, path=None) -> str:
    return emit_csv(TRACE_COLUMNS, trace.rows(game), path)


@dataclass
class ExperimentConfig:
    game: str  # builtin spec or JSON path
    algo: str = "adaptive"
    params: dict = field(default_factory=dict)  # eta, B, delta, gamma, path, eps
    adversary: str | None = None  # single point; otherwise mus/cs grid
    mus: list[float] | None = None
    cs: list[float] | None = None
    n: int = 2000
    reps: int = 50
    seed: int = 0
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if self.reps < 1:
            raise ValueError("replications must be at least 1")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown config keys: {sorted(bad)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def replication_seed(seed_base: int, r: int) -> int:
    return seed_base + r


def _policy_seed(seed: int) -> int:
    # separate stream from the adversary draws, derived from the same seed
    return int(np.random.SeedSequence([seed, 1]).generate_state(1, dtype=np.uint64)[0])


def _settings(params: dict) -> SolverSettings:
    kw = {}
    for key in ("tol_solver", "max_iter", "eps", "path", "witnesses"):
        if key in params:
            kw[key] = params[key]
    return SolverSettings(**kw)


def run_replications(game: Game, algo: str, params: dict, adversary_of, n: int, seeds: list[int],
                     geom: Geometry | None = None, record: bool = False) -> list[RegretTrace]:
    geom = geom if geom is not None else analyze(game)
    solver = None
    if algo in ("fixed", "adaptive", "hp"):
        solver = ExplorationSolver(game, geom, _settings(params))
    traces = []
    for s in seeds:
        pol = make_policy(game, algo, eta=params.get("eta"), B=params.get("B"), delta=params.get("delta"),
                          gamma=params.get("gamma", 0.0), seed=_policy_seed(s), geometry=geom,
                          solver=solver, record=record)
        pol.seed = s
        traces.append(run_episode(game, pol, adversary_of(s), n, s, pareto=geom.pareto))
    return traces


def _point_job(args):
    game_spec, c, mu, algo, params, n, seeds, adv_spec = args
    game = resolve_game(game_spec if c is None else f"builtin:cmp:{c:g}")
    if adv_spec is not None:
        def adv(s):
            return parse_adversary(adv_spec, seed=s)
    else:
        mu_vec = np.array([mu, 1 - mu]) if game.d == 2 else None
        if mu_vec is None:
            raise HarnessError("mu grids need a two-outcome game")

        def adv(s):
            return Adversary("iid", mu=mu_vec, seed=s)
    traces = run_replications(game, algo, params, adv, n, seeds)
    return [(t.R_n, t.error) for t in traces]


def sweep(config: ExperimentConfig) -> list[dict]:
    """Mean and quartiles of R_n for each (c, mu) point of the config."""
    cs = config.cs if config.cs else [None]
    if config.adversary is not None:
        mus = [None]
    else:
        mus = config.mus if config.mus else [0.5]
    seeds = [replication_seed(config.seed, r) for r in range(config.reps)]
    jobs = [(config.game, c, mu, config.algo, config.params, config.n, seeds, config.adversary)
            for c in cs for mu in mus]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as ex:
            results = list(ex.map(_point_job, jobs))
    else:
        results = [_point_job(j) for j in jobs]
    rows = []
    for (game_spec, c, mu, *_), res in zip(jobs, results):
        R = np.array([r for r, err in res if err is None])
        errors = [err for _, err in res if err is not None]
        cval = c
        if cval is None:
            g = resolve_game(game_spec)
            cval = float(g.name.split(":", 1)[1]) if g.name.startswith("cmp:") else None
        row = {"mu": mu, "c": cval, "n": config.n, "algo": config.algo, "reps": int(R.size),
               "mean_regret": float(R.mean()) if R.size else math.nan,
               "q25": float(np.quantile(R, 0.25)) if R.size else math.nan,
               "q75": float(np.quantile(R, 0.75)) if R.size else math.nan}
        if errors:
            row["errors"] = errors
            log.warning("%d replications failed at c=%s mu=%s", len(errors), c, mu)
        rows.append(row)
    rows.sort(key=lambda r: (r["c"] if r["c"] is not None else -1, r["mu"] if r["mu"] is not None else -1))
    if config.out:
        emit_sweep_csv(rows, config.out)
    return rows


def emit_sweep_csv(rows: list[dict], path=None) -> str:
    return emit_csv(SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in rows], path)


def config_metadata(config: ExperimentConfig) -> dict:
    d = asdict(config)
    d["rng"] = RNG_FAMILY
    return d


__all__ = [
    "Adversary", "parse_adversary", "RegretTrace", "run_episode", "best_fixed_action", "theoretical_bound",
    "game_bound", "emit_csv", "emit_trace_csv", "emit_sweep_csv", "ExperimentConfig", "sweep",
    "replication_seed", "run_replications", "TRACE_COLUMNS", "SWEEP_COLUMNS", "HarnessError", "LearnerError",
]
