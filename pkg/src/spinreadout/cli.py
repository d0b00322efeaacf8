"""
Command line entry point.

    spinreadout simulate --config C --out D [--cycles N --seed S --workers W]
    spinreadout analyze --data D [D ...] [--crc-threshold Nc --threshold Nr --select both|first|second|none --out O]
    spinreadout model --name M [--param k=v ...] [--out F]

Exit codes: 0 success, 2 config error, 3 analysis precondition error,
4 I/O error. Errors are printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .core import AnalysisError, ConfigError, FitError, validate_config

EXIT_OK, EXIT_CONFIG, EXIT_ANALYSIS, EXIT_IO = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _fail(EXIT_CONFIG, "usage", message)


def _fail(code: int, kind: str, message: str, **extra):
    doc = {"error": kind, "message": message, "exit_code": code, **extra}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    raise SystemExit(code)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="spinreadout", description="Simulate and analyze single-shot spin readout.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="generate a dataset from a config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--cycles", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--workers", type=int)

    a = sub.add_parser("analyze", help="analyze one or more datasets")
    a.add_argument("--data", required=True, nargs="+")
    a.add_argument("--crc-threshold", type=int)
    a.add_argument("--threshold", type=int)
    a.add_argument("--select", choices=("both", "first", "second", "none"))
    a.add_argument("--pass-threshold", type=int, default=6)
    a.add_argument("--out", help="report directory (default: <first data dir>/analysis)")

    m = sub.add_parser("model", help="emit a closed-form curve as CSV")
    m.add_argument("--name", required=True)
    m.add_argument("--param", action="append", default=[], nargs="+", metavar="k=v")
    m.add_argument("--out", help="CSV file (default: stdout)")
    return p


def cmd_simulate(args) -> int:
    from .dataset import DatasetIOError
    from .montecarlo import run_experiment

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        _fail(EXIT_IO, "io", f"cannot read config: {exc}", path=args.config)
    try:
        cfg = validate_config(text)
        ds = run_experiment(cfg, out_dir=args.out, cycles=args.cycles, seed=args.seed, workers=args.workers)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, "config", exc.message, field=exc.path)
    except DatasetIOError as exc:
        _fail(EXIT_IO, "io", str(exc))
    print(json.dumps({"out": str(args.out), "preset": ds.preset, "points": len(ds.points),
                      "cycles": ds.run.cycles}, sort_keys=True))
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .dataset import DatasetIOError, read_dataset
    from .report import AnalysisOptions, analyze, write_report

    try:
        datasets = [read_dataset(d) for d in args.data]
        opts = AnalysisOptions(crc_threshold=args.crc_threshold, threshold=args.threshold,
                               select=args.select, pass_threshold=args.pass_threshold)
        report, tables = analyze(datasets, opts)
        out = args.out or str(Path(args.data[0]) / "analysis")
        files = write_report(report, tables, out)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, "config", exc.message, field=exc.path)
    except ValueError as exc:
        _fail(EXIT_CONFIG, "options", str(exc))
    except (AnalysisError, FitError) as exc:
        _fail(EXIT_ANALYSIS, "analysis", str(exc))
    except DatasetIOError as exc:
        _fail(EXIT_IO, "io", str(exc))
    print(json.dumps({"out": out, "files": files}, sort_keys=True))
    return EXIT_OK


def cmd_model(args) -> int:
    from .curves import CurveError, model_curve
    from .photostats import rows_to_csv

    overrides = {}
    for item in (x for group in args.param for x in group):
        key, sep, val = item.partition("=")
        if not sep:
            _fail(EXIT_CONFIG, "config", f"expected k=v, got {item!r}", field=item)
        try:
            overrides[key] = float(val)
        except ValueError:
            _fail(EXIT_CONFIG, "config", f"value of {key!r} is not a number", field=key)
    try:
        text = rows_to_csv(model_curve(args.name, overrides))
    except CurveError as exc:
        _fail(EXIT_CONFIG, "config", str(exc), field=args.name)
    if args.out:
        try:
            Path(args.out).write_text(text)
        except OSError as exc:
            _fail(EXIT_IO, "io", str(exc))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handler = {"simulate": cmd_simulate, "analyze": cmd_analyze, "model": cmd_model}[args.cmd]
    try:
        return handler(args)
    except OSError as exc:
        _fail(EXIT_IO, "io", str(exc))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
