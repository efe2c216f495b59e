"""Command-line front end.

Exit codes: 0 ok, 2 input error, 3 constraint error (budget too large),
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .distribution import SHAPES, load_histogram, save_histogram, synth_distribution
from .errors import ConstraintError, SparseCacheError
from .estimator import DEFAULT_DECAY, DEFAULT_REFRESH, EstimatorState
from .placement import (
    DEFAULT_PLAN_BLOCK,
    DEFAULT_SIM_BLOCK,
    STRATEGIES,
    clip_to_blocks,
    expected_cost,
    load_checkpoints,
    place,
)
from .simulator import (
    DEFAULT_CAPACITY,
    SIM_STRATEGIES,
    SimConfig,
    load_trace,
    run_simulation,
    save_trace,
    sweep,
    write_sweep_csv,
)
from .workload import drift_trace, gen_grouped_trace, save_path

EXIT_OK, EXIT_INPUT, EXIT_CONSTRAINT, EXIT_USAGE = 0, 2, 3, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2)
    if out:
        with open(out, "w") as f:
            f.write(text + "\n")
    else:
        print(text)


def cmd_plan(args):
    h = load_histogram(args.histogram)
    cps = place(args.strategy, h.n_positions, args.budget, histogram=h, block=args.block, grid=args.grid_mode)
    if args.clip:
        cps = clip_to_blocks(cps, args.block)
    _emit({**cps.to_dict(), "strategy": args.strategy, "cost": expected_cost(h, cps).to_dict()})


def cmd_eval(args):
    h = load_histogram(args.histogram)
    cps = load_checkpoints(args.checkpoints)
    _emit(expected_cost(h, cps).to_dict())


def _sim_config(args, **kw):
    return SimConfig(
        capacity=args.k,
        block=args.block,
        decay=args.gamma,
        refresh=args.refresh,
        grid=args.grid_mode,
        seed=args.seed,
        **kw,
    )


def cmd_simulate(args):
    trace = load_trace(args.trace)
    metrics = run_simulation(trace, _sim_config(args, budget=args.budget, strategy=args.strategy))
    if args.out:
        with open(args.out, "w", newline="") as f:
            metrics.write_csv(f)
    summary = metrics.summary()
    summary["config"] = {
        "k": args.k, "budget": args.budget, "block": args.block, "strategy": args.strategy,
        "gamma": args.gamma, "refresh": args.refresh, "grid_mode": args.grid_mode, "seed": args.seed,
    }
    _emit(summary)


def cmd_sweep(args):
    trace = load_trace(args.trace)
    rows = sweep(trace, _sim_config(args), args.budgets, args.strategies)
    if args.out:
        with open(args.out, "w", newline="") as f:
            write_sweep_csv(rows, f)
    else:
        write_sweep_csv(rows, sys.stdout)


def cmd_gen(args):
    if args.histogram:
        save_histogram(synth_distribution(args.shape, args.n, seed=args.seed), args.out)
        return
    if args.drift_to:
        start = synth_distribution(args.shape, args.n, seed=args.seed)
        end = synth_distribution(args.drift_to, args.n, seed=args.seed + 1)
        reqs, path = drift_trace(args.requests, start, end, args.delta, seed=args.seed)
        save_trace(reqs, args.out)
        if args.path_out:
            save_path(path, args.path_out)
        return
    trace = gen_grouped_trace(
        args.groups, args.per_group, args.n, (args.suffix_min, args.suffix_max),
        args.shape, seed=args.seed, rate_per_group=args.rate,
    )
    save_trace(trace, args.out)


def _read_depths(path):
    depths = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError:
                obj = None
            if isinstance(obj, dict) and "overlap_depth" in obj:
                value = obj["overlap_depth"]
            elif isinstance(obj, int):
                value = obj
            else:
                raise SparseCacheError(f"line {lineno}: expected an integer depth or a depth-mode record")
            if value >= 1:
                depths.append(int(value))
    return depths


def cmd_estimate(args):
    depths = _read_depths(args.depths)
    if not depths:
        raise SparseCacheError("depth stream has no positive depths")
    state = EstimatorState(args.n or max(depths), args.gamma)
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for i, d in enumerate(depths, 1):
            state.observe(d)
            if i % args.every == 0 or i == len(depths):
                snap = state.snapshot()
                out.write(json.dumps({"count": i, **snap.to_dict()}) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if args.state_out:
        with open(args.state_out, "w") as f:
            json.dump(state.to_dict(), f)
            f.write("\n")


def build_parser():
    p = _Parser(prog="sparsecache", description="Sparse checkpoint placement for recurrent prefix caches.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser, required=True)

    s = sub.add_parser("plan", help="place checkpoints for a histogram")
    s.add_argument("histogram")
    s.add_argument("--budget", type=int, default=8)
    s.add_argument("--strategy", choices=STRATEGIES, default="dp")
    s.add_argument("--block", type=int, default=DEFAULT_PLAN_BLOCK,
                   help="block size for the block strategy, --clip and --grid-mode")
    s.add_argument("--clip", action="store_true", help="floor positions to block boundaries")
    s.add_argument("--grid-mode", action="store_true", help="restrict dp to block multiples")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("eval", help="cost of a checkpoint set under a histogram")
    s.add_argument("histogram")
    s.add_argument("checkpoints")
    s.set_defaults(func=cmd_eval)

    def sim_flags(s):
        s.add_argument("trace")
        s.add_argument("--k", type=int, default=DEFAULT_CAPACITY)
        s.add_argument("--block", type=int, default=DEFAULT_SIM_BLOCK)
        s.add_argument("--gamma", type=float, default=DEFAULT_DECAY)
        s.add_argument("--refresh", type=int, default=DEFAULT_REFRESH)
        s.add_argument("--grid-mode", action="store_true")
        s.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("simulate", help="replay a trace through a last-K cache")
    sim_flags(s)
    s.add_argument("--budget", type=int, default=8)
    s.add_argument("--strategy", choices=SIM_STRATEGIES, default="dp")
    s.add_argument("--out", help="per-request CSV path")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="simulate every (strategy, budget) pair")
    sim_flags(s)
    s.add_argument("--budgets", type=_int_list, default=[1, 2, 4, 8, 16])
    s.add_argument("--strategies", type=_str_list, default=["balanced", "block", "dp", "logarithmic", "sqrt"])
    s.add_argument("--out", help="CSV path (default stdout)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("gen", help="generate a synthetic trace or histogram")
    s.add_argument("--shape", choices=SHAPES, default="end_spike")
    s.add_argument("--groups", type=int, default=20)
    s.add_argument("--per-group", type=int, default=50)
    s.add_argument("--n", type=int, default=2048, help="base prefix length (histogram length)")
    s.add_argument("--suffix-min", type=int, default=16)
    s.add_argument("--suffix-max", type=int, default=64)
    s.add_argument("--rate", type=float, default=1.0, help="Poisson arrival rate per group")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--histogram", action="store_true", help="write the shape's histogram JSON instead")
    s.add_argument("--drift-to", choices=SHAPES, help="write a depth-mode drift trace toward this shape")
    s.add_argument("--delta", type=float, default=0.002, help="per-step L1 drift")
    s.add_argument("--requests", type=int, default=5000, help="drift trace length")
    s.add_argument("--path-out", help="sidecar JSON for the true drift path")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("estimate", help="decayed histogram snapshots from a depth stream")
    s.add_argument("depths", help="one integer per line, or depth-mode JSONL")
    s.add_argument("--gamma", type=float, default=DEFAULT_DECAY)
    s.add_argument("--every", type=int, default=DEFAULT_REFRESH)
    s.add_argument("--n", type=int, help="tracked depth range (default: deepest observation)")
    s.add_argument("--out", help="snapshot JSONL path (default stdout)")
    s.add_argument("--state-out", help="write the final estimator state JSON here")
    s.set_defaults(func=cmd_estimate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        args.func(args)
    except ConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONSTRAINT
    except (SparseCacheError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
