"""Command line entry point: ``bergflow run|fit|diff``.

Exit status: 0 when every assertion passes, 1 on an assertion failure, 2 on a
configuration or input error, 3 on a numerical failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from . import config as config_mod
from .errors import ConfigError, InputError, NumericalError
from .report import MODELS, fit_rate, is_empty_diff, read_csv, report_diff, write_csv
from .scenarios import finite_or_none, run_scenario

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
OUTPUT_ENV = "BERGFLOW_OUT"


def output_dir(cfg: dict, override: str | None = None) -> Path:
    if override:
        return Path(override)
    root = Path(os.environ.get(OUTPUT_ENV, "bergflow-out"))
    return root / (cfg["output"] or cfg["scenario"])


def write_report(result, cfg: dict, out: Path, seconds: float) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, (columns, rows) in sorted(result.tables.items()):
        write_csv(out / name, columns, rows)
        files.append(name)
    summary = {
        "scenario": result.scenario,
        "version": __version__,
        "passed": result.passed,
        "assertions": result.assertions,
        "notes": result.notes,
        "metrics": finite_or_none(result.metrics),
        "series": files,
        "config": cfg,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out / "config.echo").write_text(config_mod.dumps(cfg))
    # wall time lives apart from the summary so reports stay byte-identical
    (out / "timing.json").write_text(json.dumps({"wall_seconds": seconds}) + "\n")
    return out


def cmd_run(args) -> int:
    cfg = config_mod.load(args.config)
    start = time.perf_counter()
    result = run_scenario(cfg)
    seconds = time.perf_counter() - start
    out = write_report(result, cfg, output_dir(cfg, args.out), seconds)
    for name, status in result.assertions.items():
        print(f"{status:8s} {name}")
    print(f"report: {out}  ({seconds:.1f} s)")
    return EXIT_OK if result.passed else EXIT_ASSERT


def cmd_fit(args) -> int:
    columns, data = read_csv(args.csv)
    x_col = args.x or columns[0]
    y_col = args.y or columns[1]
    for col in (x_col, y_col):
        if col not in columns:
            raise InputError(f"column {col!r} not in {columns}")
    fit = fit_rate(data[:, columns.index(x_col)], data[:, columns.index(y_col)], args.model)
    print(json.dumps({"model": fit.model, "rate": fit.rate, "prefactor": fit.prefactor, "r2": fit.r2}))
    return EXIT_OK


def cmd_diff(args) -> int:
    diff = report_diff(args.a, args.b, rtol=args.rtol, atol=args.atol)
    print(json.dumps(diff, indent=2, sort_keys=True))
    return EXIT_OK if is_empty_diff(diff) else EXIT_ASSERT


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bergflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config")
    run.add_argument("--out", help=f"report directory (default: ${OUTPUT_ENV}/<scenario>)")
    run.set_defaults(func=cmd_run)

    fit = sub.add_parser("fit", help="fit a convergence rate to two CSV columns")
    fit.add_argument("csv")
    fit.add_argument("model", choices=MODELS)
    fit.add_argument("--x", help="independent column (default: first)")
    fit.add_argument("--y", help="dependent column (default: second)")
    fit.set_defaults(func=cmd_fit)

    diff = sub.add_parser("diff", help="compare two report directories")
    diff.add_argument("a")
    diff.add_argument("b")
    diff.add_argument("--rtol", type=float, default=1e-12)
    diff.add_argument("--atol", type=float, default=0.0)
    diff.set_defaults(func=cmd_diff)

    sub.add_parser("defaults", help="print every config key with its default").set_defaults(
        func=lambda _args: print(config_mod.dumps(config_mod.resolve({})), end="") or EXIT_OK
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InputError, FileNotFoundError) as exc:
        print(f"bergflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ArithmeticError) as exc:
        print(f"bergflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
