"""Command-line entry point.

One subcommand per experiment; the config file carries the numerics, the
flags only select the run and optionally override seed / replications /
output path.  Exit status: 0 when every gate passed, 1 when gates failed
(a JSON failure list goes to stdout), 2 for usage or config problems.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import RUNNERS, write_csv


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="busylab",
        description="Busy-period expansion laboratory for the modulated "
                    "M/M/1 queue")
    sub = parser.add_subparsers(dest="experiment", required=True,
                                metavar="|".join(EXPERIMENTS))
    helps = {
        "validate-baseline": "plain-queue moments vs closed forms",
        "coeffs": "second-order expansion coefficients",
        "eps-sweep": "amplitude sweep vs predictions",
        "fast-slow": "gap coefficient across environment time scales",
        "special-cases": "closed-form spot checks on pinned environments",
    }
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, metavar="PATH",
                       help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, metavar="U64",
                       help="override the config seed")
        p.add_argument("--replications", type=int, default=None, metavar="N",
                       help="override the config replication count")
        p.add_argument("--out", default=None, metavar="PATH",
                       help="CSV output path (default: config output_path, "
                            "else <experiment>.csv)")
        p.add_argument("--workers", type=int, default=1, metavar="N",
                       help="block pool size; never affects the numbers")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config, seed=args.seed,
                          replications=args.replications)
        if cfg.experiment is not None and cfg.experiment != args.experiment:
            raise ConfigError(
                f"config is for experiment {cfg.experiment!r}, "
                f"but subcommand is {args.experiment!r}")
        report = RUNNERS[args.experiment](cfg, workers=args.workers)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = args.out or cfg.output_path or f"{args.experiment}.csv"
    write_csv(report, out, cfg)
    for g in report.gates:
        print(f"{'PASS' if g.passed else 'FAIL'} {g.name}: {g.detail}")
    print(f"wrote {out} ({len(report.rows)} rows, "
          f"config_hash={cfg.config_hash})")
    if not report.passed:
        print(json.dumps({"experiment": args.experiment,
                          "config_hash": cfg.config_hash,
                          "failures": report.failures()}))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
