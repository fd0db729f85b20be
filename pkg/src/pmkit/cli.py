"""Command-line entry point ``pm``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .estimation import EstimationError, build_estimators, c_game, verify_unbiased
from .game import GameError, resolve_game
from .geometry import analyze
from .harness import (
    TRACE_COLUMNS, ExperimentConfig, HarnessError, emit_csv, emit_sweep_csv, game_bound, parse_adversary,
    run_replications, sweep,
)
from .learner import RNG_FAMILY, LearnerError
from .optimizer import ExplorationSolver, SolverError, SolverSettings


def _dump(obj, as_json: bool):
    if as_json:
        print(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable))
    else:
        for key, val in obj.items():
            if isinstance(val, (dict, list)):
                val = json.dumps(val, default=_jsonable)
            print(f"{key}: {val}")


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(type(v))


def cmd_classify(args):
    game = resolve_game(args.game)
    t0 = time.perf_counter()
    rep = analyze(game).report()
    rep["seconds"] = round(time.perf_counter() - t0, 4)
    _dump(rep, args.json)


def cmd_estimators(args):
    game = resolve_game(args.game)
    geom = analyze(game)
    if not geom.category.globally_observable:
        raise EstimationError(f"{geom.category.category} game has no estimators")
    est = build_estimators(geom)
    out = {"category": geom.category.category, "edges": {}}
    for e in geom.graph.edges:
        row = {}
        for kind, table in (("local", est.local), ("global", est.global_)):
            if e in table:
                ee = table[e]
                row[kind] = {
                    "kind": ee.kind, "sup_norm": ee.sup_norm, "residual": ee.residual,
                    "w": {f"{a + 1}:{game.labels[s]}": float(v) for (a, s), v in zip(game.pairs, ee.w)},
                }
        out["edges"][f"{e[0] + 1}-{e[1] + 1}"] = row
    if est.G_global is not None:
        rep = verify_unbiased(game, est.G_global, geom.pareto)
        out["chained_global"] = {"sup_norm": est.beta, "unbiased_residual": rep.max_violation,
                                 "tree_parent": {str(a + 1): (b + 1 if b is not None else None)
                                                 for a, b in est.tree.parent.items()}}
        out["c_G"] = c_game(game, est)
    _dump(out, args.json)


def _parse_q(text: str | None, k: int, pareto) -> np.ndarray:
    if text is None:
        q = np.zeros(k)
        q[list(pareto)] = 1.0 / len(pareto)
        return q
    q = np.array([float(v) for v in text.split(",")])
    if q.size != k:
        raise ValueError(f"--q needs {k} entries")
    return q / q.sum()


def cmd_opt(args):
    game = resolve_game(args.game)
    geom = analyze(game)
    settings = SolverSettings(path=args.path, eps=args.eps)
    solver = ExplorationSolver(game, geom, settings)
    q = _parse_q(args.q, game.k, geom.pareto)
    if args.hp:
        sol = solver.solve_hp(q, args.eta)
        out = {"value": sol.value, "lambda": sol.lam, "p": sol.p, "G_sup": sol.G.sup_norm,
               "witness_source": sol.source, "moment_violation": sol.moment_violation,
               "range_violation": sol.range_violation, "probes": len(sol.trace)}
        if args.delta is not None:
            out["delta"] = args.delta
    else:
        sol = solver.solve(q, args.eta)
        out = {"value": sol.value, "socp_value": sol.socp_value, "solver_value": sol.solver_value,
               "p": sol.p, "G_sup": sol.G.sup_norm, "witness_source": sol.witness_source,
               "residuals": sol.residuals, "candidates": sol.candidates, "warning": sol.warning}
    out["q"] = q
    _dump(out, args.json)


def _params(args) -> dict:
    out = {}
    for key in ("eta", "B", "delta", "gamma", "path", "eps"):
        v = getattr(args, key, None)
        if v is not None:
            out[key] = v
    return out


def cmd_run(args):
    game = resolve_game(args.game)
    geom = analyze(game)
    seeds = [args.seed + r for r in range(args.reps)]
    t0 = time.perf_counter()
    traces = run_replications(game, args.algo, _params(args),
                              lambda s: parse_adversary(args.adversary, seed=s), args.n, seeds, geom)
    wall = time.perf_counter() - t0
    header = (["rep"] if args.reps > 1 else []) + TRACE_COLUMNS
    rows = []
    for r, tr in enumerate(traces):
        for row in tr.rows(game):
            rows.append(([r] if args.reps > 1 else []) + row)
    if args.out:
        emit_csv(header, rows, args.out)
    summary = {
        "game": game.name, "algo": args.algo, "n": args.n, "reps": args.reps, "seed": args.seed,
        "rng": RNG_FAMILY, "R_n": [tr.R_n for tr in traces],
        "mean_regret": float(np.mean([tr.R_n for tr in traces])),
        "errors": [tr.error for tr in traces if tr.error], "wall_time": wall,
    }
    _dump(summary, args.json)
    if summary["errors"]:
        return 1
    return 0


def cmd_sweep(args):
    cfg = ExperimentConfig.load(args.config)
    if args.out:
        cfg.out = args.out
    if args.workers:
        cfg.workers = args.workers
    rows = sweep(cfg)
    if not cfg.out:
        sys.stdout.write(emit_sweep_csv(rows))
    return 1 if any("errors" in r for r in rows) else 0


def cmd_bound(args):
    game = resolve_game(args.game)
    _dump(game_bound(game, args.n), args.json)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pm", description="Partial monitoring toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("classify", help="classify a game")
    s.add_argument("game")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("estimators", help="per-edge loss-difference estimators")
    s.add_argument("game")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_estimators)

    s = sub.add_parser("opt", help="solve one exploration program")
    s.add_argument("game")
    s.add_argument("--eta", type=float, required=True)
    s.add_argument("--q")
    s.add_argument("--path", choices=["socp", "exact"], default="socp")
    s.add_argument("--eps", type=float)
    s.add_argument("--hp", action="store_true")
    s.add_argument("--delta", type=float)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_opt)

    s = sub.add_parser("run", help="play episodes and write the trace CSV")
    s.add_argument("--game", required=True)
    s.add_argument("--algo", choices=["fixed", "adaptive", "hp", "hedge", "exp3"], required=True)
    s.add_argument("--eta", type=float)
    s.add_argument("--B", type=float)
    s.add_argument("--delta", type=float)
    s.add_argument("--gamma", type=float)
    s.add_argument("--path", choices=["socp", "exact"])
    s.add_argument("--adversary", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out")
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="replicated parameter sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("bound", help="closed-form regret bound")
    s.add_argument("--game", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_bound)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        rc = args.func(args)
    except (GameError, EstimationError, SolverError, LearnerError, HarnessError, ValueError, OSError) as exc:
        print(f"pm: error: {exc}", file=sys.stderr)
        return 2
    return int(rc or 0)


if __name__ == "__main__":
    sys.exit(main())
