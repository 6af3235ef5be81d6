"""Command line entry point: ``bsslab run | list-experiments | validate``."""

from __future__ import annotations

import argparse
import os
import sys
import time
import traceback
from pathlib import Path

from .config import EXPERIMENTS, ConfigError, parse_config
from .csvio import csv_text as _csv_text
from .csvio import fmt as _fmt
from .csvio import write_atomic

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
REPORT_HEADER = ("check_id", "estimate", "target", "tolerance", "pass")


def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("BSSLAB_THREADS")
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ConfigError([f"BSSLAB_THREADS must be an integer, got '{env}'"])
        if n < 1:
            raise ConfigError(["BSSLAB_THREADS must be at least 1"])
        return n
    return 0


def _load(path: str):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"])
    return parse_config(text)


def cmd_list(_args) -> int:
    from .experiments import DESCRIPTIONS

    for name in EXPERIMENTS:
        print(f"{name:15s} {DESCRIPTIONS[name]}")
    return EXIT_PASS


def cmd_validate(args) -> int:
    try:
        cfg = _load(args.config)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"{args.config}: {e}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{args.config}: ok ({cfg.experiment})")
    return EXIT_PASS


def cmd_run(args) -> int:
    from . import experiments

    try:
        cfg = _load(args.config)
        threads = _threads(args.threads) or cfg.threads or 1
    except ConfigError as exc:
        for e in exc.errors:
            print(f"{args.config}: {e}", file=sys.stderr)
        return EXIT_ERROR
    if args.seed is not None:
        if args.seed < 0:
            print("--seed must be nonnegative", file=sys.stderr)
            return EXIT_ERROR
        cfg.seed = args.seed
        cfg.raw["seed"] = args.seed
    if args.out_dir is not None:
        cfg.out_dir = args.out_dir
    out = Path(cfg.out_dir)

    t0 = time.perf_counter()
    error = None
    try:
        rep = experiments.run(cfg, threads)
    except Exception as exc:  # a report is still written
        error = exc
        rep = experiments.ExperimentReport(cfg.experiment, seed=cfg.seed,
                                           config_echo=cfg.echo())
        msg = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        rep.rows.append(experiments.Row(f"error: {msg}", float("nan"), float("nan"),
                                        float("nan"), False))
    wall = time.perf_counter() - t0

    files = {"report.csv": _csv_text(REPORT_HEADER, [
        (r.check_id, r.estimate, r.target, r.tolerance, bool(r.passed)) for r in rep.rows])}
    for name, (header, rows) in rep.tables.items():
        files[f"{name}.csv"] = _csv_text(header, rows)
    cfg.raw.update(experiment=cfg.experiment, seed=cfg.seed)
    files["run.txt"] = "".join(f"{line}\n" for line in cfg.echo())
    try:
        for fname, text in files.items():
            write_atomic(out / fname, text)
    except OSError as exc:
        print(f"cannot write {exc.filename or out}: {exc.strerror}", file=sys.stderr)
        return EXIT_ERROR

    for r in rep.rows:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check_id} estimate={_fmt(r.estimate)} "
              f"target={_fmt(r.target)} tol={_fmt(r.tolerance)}")
    print(f"wall_clock_s = {wall:.2f}  threads = {threads}  out = {out}")
    if error is not None:
        if args.verbose:
            traceback.print_exception(error)
        print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_PASS if rep.passed else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsslab", description="BSS process verification suites")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out-dir")
    r.add_argument("--threads", type=int)
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(fn=cmd_run)
    sub.add_parser("list-experiments", help="list experiment names").set_defaults(fn=cmd_list)
    v = sub.add_parser("validate", help="check a config file without running it")
    v.add_argument("--config", required=True)
    v.set_defaults(fn=cmd_validate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None) is not None and args.threads < 1:
        print("--threads must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
