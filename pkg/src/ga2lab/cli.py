"""Command line: ``run``, ``sweep`` and ``validate`` over a YAML experiment config.

Log verbosity comes from ``GA2LAB_LOG_LEVEL`` (default WARNING).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from .experiment import ExperimentConfig, format_table, parse_axis, run_experiment, sweep
from .network import SpecError

LOG_ENV = "GA2LAB_LOG_LEVEL"


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ga2lab", description="Regional signal-control experiments")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train/evaluate one agent over the configured seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int, action="append", help="override seeds (repeatable)")
    run.add_argument("--episodes", type=int)
    run.add_argument("--agent", choices=["ga2-naive", "ga2-aug", "fixed", "sotl", "random"])
    run.add_argument("--cells", type=int)
    run.add_argument("--heads", type=int)
    run.add_argument("--mask", choices=["naive", "aug"], help="shorthand for --agent ga2-<mask>")
    run.add_argument("--out")
    run.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")

    sw = sub.add_parser("sweep", help="Cartesian sweep over cells / heads / mask with shared seeds")
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", action="append", required=True, help="e.g. cells=1,3,5 (repeatable)")
    sw.add_argument("--out")
    sw.add_argument("--jobs", type=int, default=1, help="worker processes for seeds")

    val = sub.add_parser("validate", help="check a config without simulating")
    val.add_argument("--config", required=True)
    return p


def _overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if args.seed:
        changes["seeds"] = list(args.seed)
    for key in ("episodes", "agent", "cells", "heads", "out"):
        val = getattr(args, key, None)
        if val is not None:
            changes[key] = val
    if args.mask:
        changes["agent"] = f"ga2-{args.mask}"
    return cfg.replace(**changes) if changes else cfg


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.command == "validate":
            cfg.validate()
            print(f"ok {cfg.config_hash()}")
            return 0
        if args.command == "run":
            cfg = _overrides(cfg, args)
            cfg.validate()
            res = run_experiment(cfg, jobs=args.jobs)
            print(json.dumps(res.summary(), sort_keys=True))
            return 0
        axes = dict(parse_axis(a) for a in args.axis)
        if args.out:
            cfg = cfg.replace(out=args.out)
        cfg.validate()
        print(format_table(sweep(cfg, axes, jobs=args.jobs)), end="")
        return 0
    except SpecError as exc:
        for prob in exc.problems:
            print(f"config error: {prob}", file=sys.stderr)
        return 2
    except (OSError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
