"""Command-line entry point: generate, bench, evaluate, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .config import SETTINGS, ExperimentConfig, parse_knob
from .dgp import generate, read_dataset_table
from .errors import AggregationError, DataError, TrainingError, TuningError, UpliftBenchError
from .harness import bench, load_base_covariates, read_rows, write_rows
from .metrics import evaluate
from .report import FORMATS, emit_report

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_TRAINING = 0, 1, 2, 3
RESULTS_FILE = "results.csv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        return ExperimentConfig.load(path)
    except FileNotFoundError:
        raise
    except (ValueError, TypeError) as exc:
        raise UsageError(f"bad config {path}: {exc}") from exc


def cmd_generate(args) -> int:
    config = _load_config(args.config)
    config.master_seed = args.seed
    if args.subsample_n:
        config.subsample_n = args.subsample_n
    try:
        knob = parse_knob(args.setting, args.knob)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    ds = generate(load_base_covariates(config), config.dgp_config(args.setting, knob))
    ds.save(args.out)
    print(f"wrote {ds.n} units to {args.out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = _load_config(args.config)
    if args.subsample_n is not None:
        config.subsample_n = args.subsample_n
    if args.runs is not None:
        if args.runs < 1:
            raise UsageError("--runs must be >= 1")
        config.n_runs = args.runs
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = bench(config)
    write_rows(rows, out / RESULTS_FILE)
    config.dump(out / "config.yaml")
    print(f"wrote {len(rows)} rows to {out / RESULTS_FILE}")
    return EXIT_OK


def _read_predictions(path: str, n: int) -> np.ndarray:
    frame = pd.read_csv(path, float_precision="round_trip")
    col = "tau_hat" if "tau_hat" in frame.columns else frame.columns[-1]
    values = pd.to_numeric(frame[col], errors="coerce").to_numpy(dtype=np.float64)
    if len(values) != n:
        raise DataError(f"{path} has {len(values)} predictions for {n} units")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path} column {col!r} has missing or non-numeric values")
    return values


def cmd_evaluate(args) -> int:
    if not 0 < args.k <= 1:
        raise UsageError("--k must lie in (0, 1]")
    table = read_dataset_table(args.dataset)
    tau_hat = _read_predictions(args.predictions, len(table["t"]))
    report = evaluate(tau_hat, table["t"], table["y"], args.k, tau_true=table["tau"])
    print(json.dumps(report.as_dict(), indent=1, sort_keys=True))
    return EXIT_OK


def cmd_report(args) -> int:
    results = Path(args.results)
    source = results / RESULTS_FILE if results.is_dir() else results
    rows = read_rows(source)
    default = source.parent / ("report.json" if args.format == "json" else "report")
    written = emit_report(rows, args.format, args.out or default)
    print(f"wrote {len(written)} file(s) under {args.out or default}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="upliftbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write one semi-synthetic dataset")
    g.add_argument("--setting", required=True, choices=sorted(SETTINGS))
    g.add_argument("--knob", required=True, help="knob level; for B, theta0 or 'theta0,theta1'")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--subsample-n", type=int)
    g.set_defaults(func=cmd_generate)

    b = sub.add_parser("bench", help="run the benchmark grid")
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.add_argument("--subsample-n", type=int)
    b.add_argument("--runs", type=int)
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("evaluate", help="score predictions against a generated dataset")
    e.add_argument("--dataset", required=True)
    e.add_argument("--predictions", required=True)
    e.add_argument("--k", type=float, default=0.3)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="aggregate bench results into tables")
    r.add_argument("--results", required=True, help="bench output directory or results CSV")
    r.add_argument("--format", choices=FORMATS, default="csv")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def _exit_code(exc: BaseException) -> int:
    cause = getattr(exc, "cause", None) or exc
    if isinstance(cause, (TrainingError, TuningError)):
        return EXIT_TRAINING
    if isinstance(cause, (DataError, AggregationError, FileNotFoundError, pd.errors.ParserError, KeyError)):
        return EXIT_DATA
    return EXIT_TRAINING


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, pd.errors.ParserError, pd.errors.EmptyDataError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except UpliftBenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
