"""Command-line entry point: ``dpkm run | compare | attack-demo``.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import attack, harness
from .clustering import (
    DEFAULT_GRID,
    DPConfig,
    Schedule,
    Strategy,
    baseline_laplace,
    centroid_cost,
    dp_kmeans,
    lloyd,
    sample_init,
)

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def parse_eps_range(text: str) -> tuple[float, ...]:
    """``start:stop:step`` (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            start, stop, step = (float(p) for p in text.split(":"))
            if not step > 0 or stop < start:
                raise UsageError(f"bad epsilon range {text!r}")
            n = int(math.floor((stop - start) / step + 1e-9)) + 1
            values = tuple(round(start + i * step, 10) for i in range(n))
        else:
            values = tuple(float(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"bad epsilon range {text!r}") from None
    if not values or any(not v > 0 for v in values):
        raise UsageError("epsilon values must be positive")
    return values


def parse_grid(text: str) -> tuple[int, int]:
    parts = text.lower().replace(",", "x").split("x")
    try:
        grid = tuple(int(p) for p in parts)
    except ValueError:
        raise UsageError(f"bad grid {text!r}") from None
    if len(grid) == 1:
        grid = (grid[0], grid[0])
    if len(grid) != 2 or min(grid) < 16:
        raise UsageError("grid must be NxM with both sides >= 16")
    return grid


def _columns(text):
    if text is None:
        return None
    try:
        return tuple(int(c) for c in text.split(","))
    except ValueError:
        raise UsageError(f"bad column list {text!r}") from None


def _seed(args) -> int:
    env = os.environ.get("DPKM_SEED")
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"DPKM_SEED must be an integer, got {env!r}") from None
    return args.seed


def _positive(name, value, allow_zero=False):
    if value is None:
        return
    if not (value >= 0 if allow_zero else value > 0) or math.isnan(value):
        raise UsageError(f"{name} must be {'non-negative' if allow_zero else 'positive'}")


def _load(args) -> np.ndarray:
    if (args.data is None) == (args.synthetic is None):
        raise UsageError("give exactly one of --data or --synthetic")
    if args.synthetic is not None:
        try:
            s = harness.BlobSpec.parse(args.synthetic)
        except harness.ConfigError as exc:
            raise UsageError(str(exc)) from None
        return harness.synthetic_blobs(s.k_true, s.per_cluster, s.d, s.spread, s.seed)
    raw = harness.load_csv(args.data, args.header, _columns(args.columns))
    return harness.normalize_unit_box(raw)


def _dump(payload: dict, out) -> None:
    text = json.dumps(harness._clean(payload), indent=2, allow_nan=False) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _add_data_args(p):
    p.add_argument("--data", help="CSV path or bundled dataset name (iris)")
    p.add_argument("--synthetic", help="Gaussian blobs: k_true,per_cluster,d,spread[,seed]")
    p.add_argument("--header", dest="header", action="store_const", const=True, default=None, help="first row is a header")
    p.add_argument("--no-header", dest="header", action="store_const", const=False)
    p.add_argument("--columns", help="comma-separated zero-based columns to keep")
    p.add_argument("--seed", type=int, default=0, help="master seed (DPKM_SEED overrides)")


def _add_loop_args(p):
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--grid", default=f"{DEFAULT_GRID[0]}x{DEFAULT_GRID[1]}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpkm", description="Convergent differentially private k-means.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one algorithm once")
    _add_data_args(run)
    _add_loop_args(run)
    run.add_argument("--algo", choices=("lloyd", "dp", "uniform", "halving"), default="dp")
    run.add_argument("--k", type=int, required=True)
    run.add_argument("--strategy", default="prior", help="prior (past+future) or posterior (past)")
    run.add_argument("--eps-iter", type=float, default=0.1)
    run.add_argument("--eps0", type=float, default=0.1)
    run.add_argument("--eps-total", type=float, default=1.0, help="total budget for the Laplace baselines")
    run.add_argument("--iterations", type=int, default=harness.DEFAULT_UNIFORM_ITERATIONS, help="uniform schedule length")
    run.add_argument("--out", help="write JSON here instead of stdout")
    run.add_argument("--format", choices=("json",), default="json")

    cmp_ = sub.add_parser("compare", help="multi-trial comparison report")
    _add_data_args(cmp_)
    _add_loop_args(cmp_)
    cmp_.add_argument("--k", type=int, required=True)
    cmp_.add_argument("--trials", type=int, default=300)
    cmp_.add_argument("--eps", default="0.1:1.0:0.1", help="start:stop:step or a comma list")
    cmp_.add_argument("--eps-iter", type=float, help="fixed per-iteration budget (default: the swept epsilon)")
    cmp_.add_argument("--eps0", type=float, help="fixed final budget (default: the swept epsilon)")
    cmp_.add_argument("--strategies", default="posterior,prior")
    cmp_.add_argument("--baselines", default="uniform,halving")
    cmp_.add_argument("--uniform-iterations", type=int, default=harness.DEFAULT_UNIFORM_ITERATIONS)
    cmp_.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    cmp_.add_argument("--out", required=True, help="report path")
    cmp_.add_argument("--format", choices=("json", "csv"), default="json")
    cmp_.add_argument("--plot-data", help="long-format CSV path (default: <out stem>.plot.csv)")

    atk = sub.add_parser("attack-demo", help="difference attack on released cluster means")
    _add_data_args(atk)
    atk.add_argument("--k", type=int, default=3)
    atk.add_argument("--eps0", type=float, default=0.5, help="0 skips the noisy releases")
    atk.add_argument("--demos", type=int, default=100)
    atk.add_argument("--out", help="write JSON here instead of stdout")
    atk.add_argument("--format", choices=("json",), default="json")
    return parser


def cmd_run(args) -> int:
    if args.k is None or args.k < 1:
        raise UsageError("--k must be >= 1")
    for name in ("eps_iter", "eps0", "eps_total", "tol"):
        _positive(name.replace("_", "-"), getattr(args, name), allow_zero=name == "tol")
    if args.max_iter < 1 or args.iterations < 1:
        raise UsageError("--max-iter and --iterations must be >= 1")
    grid = parse_grid(args.grid)
    try:
        strategy = Strategy.parse(args.strategy)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    seed = _seed(args)
    data = _load(args)
    if args.k > data.shape[0]:
        raise UsageError(f"--k {args.k} exceeds the number of records ({data.shape[0]})")
    rng = np.random.default_rng(seed)
    init = sample_init(data, args.k, rng)
    ref = lloyd(data, args.k, init)
    ref_cost = centroid_cost(data, ref.centroids)
    payload = {"algorithm": args.algo, "k": args.k, "n": data.shape[0], "d": data.shape[1], "seed": seed}
    if args.algo == "lloyd":
        payload.update(
            centroids=ref.centroids.tolist(), cost=ref_cost, normalized_cost=ref_cost,
            iterations=ref.iteration, converged=ref.converged, epsilon_total=0.0,
        )
    else:
        if args.algo == "dp":
            res = dp_kmeans(
                data, args.k, strategy, args.eps_iter, args.eps0,
                DPConfig(tol=args.tol, max_iter=args.max_iter, grid=grid), rng, init_centroids=init,
            )
            payload["strategy"] = strategy.value
            payload["eps_iter"] = args.eps_iter
            payload["eps0"] = args.eps0
        else:
            schedule = Schedule.uniform(args.iterations) if args.algo == "uniform" else Schedule.halving()
            res = baseline_laplace(data, args.k, schedule, args.eps_total, rng, init_centroids=init)
        c = centroid_cost(data, res.final_centroids)
        pre = centroid_cost(data, res.prenoise_centroids)
        payload.update(
            centroids=res.final_centroids.tolist(),
            prenoise_centroids=res.prenoise_centroids.tolist(),
            cost=c,
            normalized_cost=harness.normalized_cost(c, ref_cost),
            prenoise_cost=pre,
            match=harness.match_flag(pre, ref_cost),
            iterations=res.iterations,
            converged=res.converged,
            epsilon_total=res.epsilon_total,
            ledger=res.ledger.to_dict(),
            lloyd_reference={"cost": ref_cost, "iterations": ref.iteration},
        )
    _dump(payload, args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    if args.threads < 1:
        raise UsageError("--threads must be >= 1")
    _positive("--eps-iter", args.eps_iter)
    _positive("--eps0", args.eps0)
    if (args.data is None) == (args.synthetic is None):
        raise UsageError("give exactly one of --data or --synthetic")
    try:
        config = harness.ExperimentConfig(
            k=args.k,
            data=args.data,
            synthetic=harness.BlobSpec.parse(args.synthetic) if args.synthetic else None,
            has_header=args.header,
            columns=_columns(args.columns),
            trials=args.trials,
            eps_list=parse_eps_range(args.eps),
            eps_iter=args.eps_iter,
            eps0=args.eps0,
            strategies=tuple(s for s in args.strategies.split(",") if s),
            baselines=tuple(b for b in args.baselines.split(",") if b),
            uniform_iterations=args.uniform_iterations,
            seed=_seed(args),
            tol=args.tol,
            max_iter=args.max_iter,
            grid=parse_grid(args.grid),
        )
        config.validate()
    except (harness.ConfigError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    report = harness.run_trials(config, threads=args.threads)
    out = Path(args.out)
    harness.emit_report(report, args.format, out)
    plot_path = Path(args.plot_data) if args.plot_data else out.with_name(f"{out.stem}.plot.csv")
    harness.emit_plot_data(report, plot_path)
    return EXIT_OK


def cmd_attack_demo(args) -> int:
    if args.eps0 is None or math.isnan(args.eps0) or args.eps0 < 0:
        raise UsageError("--eps0 must be >= 0")
    if args.k < 1 or args.demos < 1:
        raise UsageError("--k and --demos must be >= 1")
    data = _load(args)
    summary = attack.run_demos(data, args.k, args.eps0, demos=args.demos, seed=_seed(args))
    _dump(summary, args.out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "compare": cmd_compare, "attack-demo": cmd_attack_demo}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"dpkm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        print(f"dpkm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
