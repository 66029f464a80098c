"""Command-line entry point.

Exit codes: 0 success, 2 invalid configuration or input, 1 compute failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys

from .config import Config, ConfigError, dump_config, parse_config, validate
from .meshcore import MeshError
from .pipeline import StageError, run_stages

COMMANDS = {
    "fea": "fea",
    "slice": "slice",
    "flow": "flow",
    "paths": "paths",
    "metrics": "metrics",
    "pipeline": "metrics",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stresspath", description="Stress-aligned curved-layer toolpath generation.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the pipeline through the {COMMANDS[name]} stage")
        p.add_argument("--config", help="configuration file (key = value); defaults apply when omitted")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--jobs", type=int, help="worker threads for per-slice stages")
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("config", help="print the effective configuration")
    p.add_argument("--config")
    return ap


def load(args) -> Config:
    cfg = parse_config(args.config) if args.config else validate(Config())
    if getattr(args, "out", None):
        cfg.output = args.out
    if getattr(args, "jobs", None) is not None:
        cfg = dataclasses.replace(cfg, jobs=args.jobs)
        validate(cfg)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    if args.command == "config":
        sys.stdout.write(dump_config(cfg))
        return 0
    try:
        res = run_stages(cfg, COMMANDS[args.command], cfg.output, cfg.jobs)
    except (ConfigError, MeshError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for name, path in res.files.items():
        print(f"{name}: {path}")
    if res.alignment is not None:
        for k, v in sorted(res.alignment.gamma.items()):
            print(f"gamma[{k}] = {v:.4f}")
        for k, v in sorted(res.alignment.beta.items()):
            print(f"beta[{k}] = {v:.4f}")
    if res.spacing is not None:
        print(f"spacing mean = {res.spacing.mean:.4f} variance = {res.spacing.variance:.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
