"""Command line interface.

Subcommands: run, converge, sweep, thresholds, timing, validate-family.
Exit codes: 0 success, 1 acceptance-check failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import harness
from .harness import ConfigError

_COMMAND_STUDIES = {
    "run": "run",
    "converge": "convergence",
    "sweep": "stability_sweep",
    "thresholds": "threshold_map",
    "timing": "timing",
    "validate-family": "validate_family",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splitdecomp",
        description="Solution-decomposition splitting schemes: studies and checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for command in _COMMAND_STUDIES:
        p = sub.add_parser(command)
        p.add_argument("--config", required=True, help="TOML or JSON experiment config")
        p.add_argument("--out", default=None, help="output directory for CSV/JSON reports")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--threads", type=int, default=None, help="override thread count")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes.
        return 2 if exc.code not in (0, None) else 0

    try:
        cfg = harness.load_config(args.config)
        cfg.study = _COMMAND_STUDIES[args.command]
        if args.seed is not None:
            cfg.seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        if args.out is not None:
            cfg.output_dir = args.out
        report = harness.run_study(cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    if cfg.output_dir:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        harness.write_csv(report, out / f"{report.study}.csv")
        harness.write_summary(report, out / f"{report.study}_summary.json")

    for row in report.rows:
        print(", ".join(f"{c}={harness._fmt(row.get(c, ''))}" for c in report.columns))
    for name, ok in sorted(report.verdicts.items()):
        print(f"[{'PASS' if ok else 'FAIL'}] {name}")
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())
