"""Command-line entry point: ``bilevelkit <experiment> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from . import experiments
from .config import EXPERIMENTS, default_config, dump_config, load_config
from .errors import BilevelError, InvalidConfig, InvalidSchedule

log = logging.getLogger("bilevelkit")

EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="bilevelkit",
        description="Hyper-gradient estimators and single-loop bilevel solvers.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True)
    helps = {
        "hypergrad-bench": "estimator error vs K on a quadratic problem",
        "fsla-run": "run FSLA (and optional baselines) on a bilevel problem",
        "clean-bench": "data-cleaning benchmark: FSLA against double-loop baselines",
        "oracle-check": "finite-difference check of every oracle",
    }
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("-v", "--verbose", action="count", default=0,
                       help="log progress to stderr (repeat for debug)")
        p.add_argument("--config", help="YAML config; defaults are used when omitted")
        p.add_argument("--seed", type=_u64, help="override the config seed")
        p.add_argument("--out", help="CSV output path (default: stdout)")
        p.add_argument("--jobs", type=_positive, help="worker processes for independent runs")
        p.add_argument("--record-wall-time", action="store_true", default=None,
                       help="fill wall_ns (output is then no longer reproducible)")
        p.add_argument("--dump-config", action="store_true",
                       help="print the effective config as YAML and exit")
    return parser


def resolve_config(args):
    cfg = load_config(args.config, args.experiment) if args.config else default_config(args.experiment)
    updates = {}
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.out is not None:
        updates["output"] = args.out
    if args.jobs is not None:
        updates["jobs"] = args.jobs
    if args.record_wall_time:
        updates["record_wall_time"] = True
    return cfg.model_copy(update=updates) if updates else cfg


def _emit(report, cfg):
    if cfg.output:
        report.write(cfg.output)
    else:
        sys.stdout.write(report.to_text())


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = resolve_config(args)
    except (InvalidConfig, OSError) as exc:
        print(f"bilevelkit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(dump_config(cfg))
        return 0

    try:
        if cfg.experiment == "hypergrad-bench":
            report = experiments.run_hypergrad_bench(cfg)
        elif cfg.experiment == "oracle-check":
            report, failures = experiments.run_oracle_check(cfg)
            _emit(report, cfg)
            for row in report.rows:
                if not row[3]:
                    print(f"FAIL {row[0]} point={row[1]} {row[2]} rel_err={row[4]:.3e}",
                          file=sys.stderr)
            return min(failures, 255)
        else:
            report = experiments.run_solver_bench(cfg)
    except (InvalidConfig, InvalidSchedule) as exc:
        print(f"bilevelkit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BilevelError as exc:
        print(f"bilevelkit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    _emit(report, cfg)
    for method, stats in report.summary.items():
        text = " ".join(f"{k}={v:.4g}" for k, v in stats.items())
        log.info("%s %s", method, text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
