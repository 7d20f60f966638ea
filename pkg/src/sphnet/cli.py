"""Command line entry point: ``sphnet {gen,run,ablate,check}``.

Exit codes: 0 success, 1 runtime or training failure, 2 usage, config or
I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import dataio
from .experiment import (ABLATION_GRID, PROFILES, REGIMES, ExperimentConfig, SyntheticSpec,
                         gen_synthetic, run_ablation, run_experiment)
from .model import ConfigError
from .selfcheck import run_checks
from .train import CheckpointError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

USAGE_ERRORS = (OSError, ConfigError, CheckpointError, json.JSONDecodeError,
                dataio.DataFormatError, dataio.EmptyInputError, dataio.ImputationError,
                dataio.InsufficientDataError, dataio.SplitError, dataio.DivisibilityError)


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError(f"seed must be in [0, 2^64), got {v}")
    return v


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sphnet", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="write a synthetic OHLCV fixture")
    g.add_argument("--regime", choices=REGIMES, default="sinusoid-plus-trend")
    g.add_argument("--length", type=int, default=600)
    g.add_argument("--seed", type=_u64, default=0)
    g.add_argument("--out", required=True, help="CSV path to write")

    for verb, text in (("run", "train and evaluate one configuration"),
                       ("ablate", "sweep patch count x heads")):
        r = sub.add_parser(verb, help=text)
        r.add_argument("--config", help="experiment JSON; defaults to the synthetic sinusoid fixture")
        r.add_argument("--data", help="OHLCV CSV, overrides the config's data source")
        r.add_argument("--out", help="output directory")
        r.add_argument("--seed", type=_u64, help="model init and shuffle seed")
        r.add_argument("--profile", choices=sorted(PROFILES), default=None)
        if verb == "ablate":
            r.add_argument("--patches", type=_int_list, default=ABLATION_GRID)
            r.add_argument("--heads", type=_int_list, default=ABLATION_GRID)

    c = sub.add_parser("check", help="gradient check and pipeline invariants")
    c.add_argument("--probes", type=int, default=200)
    c.add_argument("--seed", type=_u64, default=0)
    return p


def resolve_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.from_json(args.config, args.profile)
    else:
        cfg = ExperimentConfig.from_dict({"synthetic": {}}, args.profile)
    if args.data:
        cfg = replace(cfg, data=args.data, synthetic=None)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out:
        cfg = replace(cfg, out_dir=args.out)
    cfg = cfg.validate()
    if cfg.data is not None and not Path(cfg.data).is_file():
        raise FileNotFoundError(f"data file not found: {cfg.data}")
    return cfg


def _summary(report) -> str:
    r, c, b = report.regression, report.classification, report.baseline["regression"]
    return (f"mse={r['mse']:.6g} r2={r['r2']:.4f} accuracy={c['accuracy']:.4f} "
            f"precision={c['precision']:.4f} recall={c['recall']:.4f} "
            f"baseline_mse={b['mse']:.6g}")


def cmd_gen(args) -> int:
    path = gen_synthetic(args.seed, args.length, args.regime, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    report = run_experiment(resolve_config(args))
    print(_summary(report))
    if args.out:
        print(f"wrote {Path(args.out) / 'report.json'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    result = run_ablation(resolve_config(args), args.patches, args.heads)
    for row in result.table:
        if row["status"] == "ok":
            print(f"P={row['P']:<3} heads={row['heads']:<3} mse={row['mse']:.6g} "
                  f"r2={row['r2']:.4f} accuracy={row['accuracy']:.4f}")
        else:
            print(f"P={row['P']:<3} heads={row['heads']:<3} failed: {row['error']}")
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_checks(probe_count=args.probes, seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


COMMANDS = {"gen": cmd_gen, "run": cmd_run, "ablate": cmd_ablate, "check": cmd_check}


def _describe(e: BaseException) -> str:
    return f"{type(e).__module__}.{type(e).__name__}: {e}"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except USAGE_ERRORS as e:
        print(f"error: {_describe(e)}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # training divergence, numerical failures
        print(f"error: {_describe(e)}", file=sys.stderr)
        return EXIT_RUNTIME
