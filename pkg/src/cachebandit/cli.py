"""Command-line entry point: ``cachebandit run|bounds|paper-defaults``."""
from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace

from .backend import DEFAULT_BACKEND, available_backends
from .policies import ConfigurationError
from .runner import config_to_toml, default_paper_config, evaluate_bounds, load_config, run_experiment, select_policies


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cachebandit", description="Cache placement bandit experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="simulate a config and write aggregate CSVs plus a JSON sidecar")
    run.add_argument("--config", required=True, help="TOML experiment config")
    run.add_argument("--out", default="results", help="output directory (default: results)")
    run.add_argument("--seed", type=_u64, help="override the config seed")
    run.add_argument("--replicates", type=_positive, help="override the number of replicates")
    run.add_argument("--horizon", type=int, help="override the number of periods")
    run.add_argument("--policies", help="comma-separated kinds or labels to keep")
    run.add_argument("--full-resolution", action="store_true", help="write every period instead of the decimated grid")
    run.add_argument("--workers", type=_positive, help="worker processes (outputs do not depend on this)")
    run.add_argument("--traces", action="store_true", help="also write one per-period CSV per episode")
    run.add_argument("--backend", choices=available_backends(), default=DEFAULT_BACKEND)
    run.add_argument("--quiet", action="store_true")

    bounds = sub.add_parser("bounds", help="evaluate the closed-form regret bounds on a small instance")
    bounds.add_argument("--config", required=True)
    bounds.add_argument("--t-max", type=_positive, required=True)
    bounds.add_argument("--out", help="write bounds.csv and bounds.json here")

    defaults = sub.add_parser("paper-defaults", help="print the default experiment config")
    defaults.add_argument("--out", help="write to this file instead of stdout")
    return parser


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.replicates is not None:
        cfg = replace(cfg, replicates=args.replicates)
    if args.horizon is not None:
        if args.horizon < 0:
            raise ConfigurationError("--horizon must be >= 0")
        cfg = replace(cfg, horizon=args.horizon)
    if args.policies:
        cfg = select_policies(cfg, args.policies.split(","))
    if args.full_resolution:
        cfg = replace(cfg, full_resolution=True)
    if args.workers is not None:
        cfg = replace(cfg, workers=args.workers)

    start = time.perf_counter()
    last = [0.0]

    def progress(done, total):
        now = time.perf_counter()
        if not args.quiet and (done == total or now - last[0] > 2.0):
            last[0] = now
            print(f"\r{done}/{total} episodes ({now - start:.1f}s)", end="", file=sys.stderr, flush=True)

    paths = run_experiment(cfg, args.out, backend=args.backend, traces=args.traces, progress=progress)
    if not args.quiet:
        print(file=sys.stderr)
        for kind, path in paths.items():
            print(f"{kind}: {path}")
        print(f"fingerprint: {cfg.fingerprint}")
    return 0


def _cmd_bounds(args) -> int:
    cfg = load_config(args.config)
    result = evaluate_bounds(cfg, args.t_max, out_dir=args.out)
    summary = {k: v for k, v in result.items() if k != "rows"}
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


def _cmd_defaults(args) -> int:
    text = config_to_toml(default_paper_config())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"run": _cmd_run, "bounds": _cmd_bounds, "paper-defaults": _cmd_defaults}
    try:
        return handlers[args.command](args)
    except (ConfigurationError, ValueError, OSError) as exc:
        print(f"cachebandit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
