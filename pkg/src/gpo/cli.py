"""Command line entry point: ``gpo preprocess|solve|sweep|oracle|generate``."""
from __future__ import annotations

import argparse
import contextlib
import sys
import time
from pathlib import Path

from . import benchmarks
from .exceptions import GPOError, InfeasibleThresholdError, ModelFormatError, InvalidModelError
from .gpomcp import PlannerConfig
from .guard import check_feasible
from .harness import latency_report, parse_thresholds, run_sweep, summarize
from .io import load_model, model_hash, save_model
from .support import (
    check_observable_rewards,
    enumerate_valid_supports,
    read_cache,
    value_iteration,
    write_cache,
)

EXIT_OK = 0
EXIT_IO = 1
EXIT_INFEASIBLE = 2


def prepare(path, discount=None, cache=None, pessimistic=None, max_iters=None):
    """Load a model and compute (or reload) its future-value table."""
    t0 = time.perf_counter()
    model = load_model(path, discount=discount)
    if pessimistic is None:
        pessimistic = not check_observable_rewards(model).observable
    game = enumerate_valid_supports(model, pessimistic=pessimistic)
    table = None
    digest = model_hash(model)
    if cache and Path(cache).exists():
        table = read_cache(cache, game, digest, model.discount)
    cached = table is not None
    if table is None:
        table = value_iteration(game, max_iters=max_iters)
        if cache:
            write_cache(cache, table, digest)
    return model, game, table, time.perf_counter() - t0, cached


def _initial_value(table):
    return min(float(table.values[b]) for b in table.game.initial)


def cmd_preprocess(args):
    model, game, table, secs, cached = prepare(args.model, args.discount, args.cache, max_iters=args.max_iters)
    print(f"model: {model.name} ({model.n_states} states, {model.n_actions} actions, "
          f"{model.n_observations} observations, discount {model.discount:g})")
    print(f"supports: {game.n_supports}" + ("  (pessimistic rewards)" if game.pessimistic else ""))
    print(f"value iteration: {table.iterations} sweeps, residual {table.residual:.3g}, "
          f"{'fixpoint' if table.exact else 'corrected early stop'}" + ("  (from cache)" if cached else ""))
    print(f"guaranteed value at the initial belief: {_initial_value(table):.12g}")
    print(f"preprocessing time: {secs:.3f} s")
    return EXIT_OK


def _config(args):
    return PlannerConfig(simulations=args.simulations, ucb_constant=args.ucb, depth=args.depth,
                         particles=args.particles, seed=args.seed)


def _sweep(args, thresholds):
    model, game, table, secs, _ = prepare(args.model, args.discount, args.cache)
    feasible = [t for t in thresholds if check_feasible(table, t)]
    cfg = _config(args)
    ctx = open(args.out, "w", encoding="utf-8", newline="") if args.out not in (None, "-") else contextlib.nullcontext(sys.stdout)
    with ctx as fh:
        records = run_sweep(model, game, table, thresholds, args.episodes, cfg, fh,
                            base_seed=args.seed, horizon=args.horizon, workers=args.workers,
                            timing=not args.no_timing)
    if records:
        for t, (mean, sd, n) in sorted(summarize(records).items()):
            ok = sum(r.guarantee_ok for r in records if r.threshold == t)
            print(f"t={t:g}: mean payoff {mean:.4f} (sd {sd:.4f}, n={n}), guarantee held in {ok}/{n}",
                  file=sys.stderr)
        if not args.no_timing:
            rep = latency_report(records, secs)
            print(f"latency: mean {rep['mean_ms']:.2f} ms, median {rep['median_ms']:.2f} ms, "
                  f"p99 {rep['p99_ms']:.2f} ms; preprocessing {secs:.3f} s", file=sys.stderr)
    if len(feasible) < len(thresholds):
        bad = [t for t in thresholds if t not in feasible]
        print(f"infeasible thresholds (above {_initial_value(table):.12g}): "
              + ", ".join(f"{t:g}" for t in bad), file=sys.stderr)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_solve(args):
    return _sweep(args, [args.threshold])


def cmd_sweep(args):
    return _sweep(args, parse_thresholds(args.thresholds))


def cmd_oracle(args):
    from .oracle import describe, gval_search

    model, game, table, _, _ = prepare(args.model, args.discount, args.cache)
    if not check_feasible(table, args.threshold):
        raise InfeasibleThresholdError(
            f"threshold {args.threshold:g} exceeds the guaranteed value {_initial_value(table):.12g}"
        )
    res = gval_search(model, table, args.threshold, args.depth)
    print(f"best expected value: {res.value:.12g}")
    print(f"upper bound at depth {args.depth}: {res.upper:.12g}")
    print(f"worst-case payoff of the witness: {res.worst:.12g}")
    print(f"histories explored: {res.explored}")
    print("witness:")
    print(describe(model, res.witness, 1))
    return EXIT_OK


def cmd_generate(args):
    if args.family == "tiger":
        model = benchmarks.gen_tiger_mining()
    elif args.family == "hallway":
        model = benchmarks.gen_hallway(args.width, args.height, traps=tuple(args.trap or ()),
                                       discount=args.gen_discount)
    else:
        model = benchmarks.gen_rocksample(args.grid, args.rocks, sensor_accuracy=args.accuracy,
                                          discount=args.gen_discount, seed=args.seed)
    save_model(model, args.out)
    print(f"wrote {args.out}: {model.n_states} states")
    return EXIT_OK


def _trap(text):
    x, y = text.split(",")
    return int(x), int(y)


def build_parser():
    p = argparse.ArgumentParser(prog="gpo", description="Guaranteed payoff optimization for POMDPs.")
    sub = p.add_subparsers(dest="command", required=True)

    def model_args(sp):
        sp.add_argument("--model", required=True, help="model file in pomdp v1 format")
        sp.add_argument("--discount", type=float, help="override the model's discount")
        sp.add_argument("--cache", help="future-value cache file (read if fresh, written otherwise)")

    sp = sub.add_parser("preprocess", help="enumerate supports and compute future values")
    model_args(sp)
    sp.add_argument("--max-iters", type=int)
    sp.set_defaults(func=cmd_preprocess)

    def run_args(sp):
        sp.add_argument("--episodes", type=int, default=100)
        sp.add_argument("--simulations", type=int, default=1024)
        sp.add_argument("--ucb", type=float, help="UCB constant (default max|r|/(1-γ))")
        sp.add_argument("--particles", type=int, default=1024)
        sp.add_argument("--depth", type=int, help="search/rollout depth cutoff")
        sp.add_argument("--seed", type=int, default=0, help="base seed; episode i uses seed+i")
        sp.add_argument("--horizon", type=int, help="episode length cap")
        sp.add_argument("--workers", type=int, help="worker processes (capped by GPO_THREADS)")
        sp.add_argument("--out", default="-", help="CSV output path, '-' for stdout")
        sp.add_argument("--no-timing", action="store_true",
                        help="write 0 for latency so the CSV is byte-stable")

    sp = sub.add_parser("solve", help="run episodes at one threshold")
    model_args(sp)
    sp.add_argument("--threshold", type=float, required=True)
    run_args(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("sweep", help="run episodes over a range of thresholds")
    model_args(sp)
    sp.add_argument("--thresholds", required=True, help="a:b:step or a comma list")
    run_args(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("oracle", help="exhaustive best guaranteed policy on a tiny model")
    model_args(sp)
    sp.add_argument("--threshold", type=float, required=True)
    sp.add_argument("--depth", type=int, default=6)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("generate", help="write a benchmark model file")
    sp.add_argument("family", choices=["tiger", "hallway", "rocksample"])
    sp.add_argument("--out", required=True)
    sp.add_argument("--width", type=int, default=10)
    sp.add_argument("--height", type=int, default=5)
    sp.add_argument("--trap", type=_trap, action="append", help="x,y (repeatable)")
    sp.add_argument("--grid", type=int, default=4)
    sp.add_argument("--rocks", type=int, default=3)
    sp.add_argument("--accuracy", type=float, default=0.8)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--gen-discount", type=float, default=0.95)
    sp.set_defaults(func=cmd_generate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleThresholdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ModelFormatError, InvalidModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GPOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
