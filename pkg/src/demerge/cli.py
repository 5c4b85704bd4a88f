"""Command-line frontend.

Subcommands: ``diff`` (distribution vector extraction), ``merge``
(weighted composition onto a base), ``interp`` (model interpolation),
``search grid|random`` (weight search against an external evaluator),
``analyze`` (weight-space geometry report), and ``cost`` (gpu-hour
comparison).

Exit codes: 0 success; 2 usage/configuration error; 3 data or format
error; 4 evaluator failure. Every error is a single stderr line of the
form ``ERROR <kind>: <detail>``. Output files are written to a temporary
sibling and atomically renamed, so no partial artifacts survive a crash.
"""

import argparse
import json
import os
import sys
import tempfile
from pathlib import Path

from . import __version__
from .analytics import (DEFAULT_LAYER_PATTERN, analytics_report,
                        report_csv_sections)
from .arith import WeightConfig, compose_dem, extract_dv, interpolate
from .cost import (cost_report, format_cost_report, load_scenario,
                   reference_scenario)
from .errors import (CompatibilityError, ConfigError, DegenerateInput,
                     EvaluatorError, FormatError, IntegrityError, IoError,
                     NumericsError, SearchFailed)
from .search import (DEFAULT_GRID, DEFAULT_SEED, grid_search_single_coeff,
                     random_search)
from .store import FORMAT_VERSION

_DATA_ERRORS = (FormatError, IntegrityError, IoError, CompatibilityError,
                NumericsError, DegenerateInput)
_EVALUATOR_ERRORS = (EvaluatorError, SearchFailed)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_EVALUATOR = 4


class _Parser(argparse.ArgumentParser):
    """Argparse whose own failures use the machine-parsable error line."""

    def error(self, message):
        print(f"ERROR UsageError: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _one_line(text: str) -> str:
    return " ".join(str(text).split())


def _fail(exc: Exception, code: int) -> int:
    print(f"ERROR {type(exc).__name__}: {_one_line(exc)}", file=sys.stderr)
    return code


def _write_text_atomic(path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    try:
        fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp",
                                   dir=directory)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise IoError(f"cannot write {path}: {exc}") from exc


def _parse_labeled(pairs, what: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for item in pairs or []:
        label, sep, path = item.partition("=")
        if not sep or not label or not path:
            raise ConfigError(f"{what} must look like LABEL=PATH, got {item!r}")
        if label in out:
            raise ConfigError(f"duplicate {what} label {label!r}")
        out[label] = path
    return out


def _load_weights(value: str) -> WeightConfig:
    """Weights given inline as JSON or as a path to a JSON file."""
    if value.lstrip().startswith("{"):
        return WeightConfig.from_json(value)
    try:
        text = Path(value).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read weights file {value}: {exc}") from exc
    return WeightConfig.from_json(text)


def _parse_grid(value: str) -> list[float]:
    try:
        grid = [float(token) for token in value.split(",") if token.strip()]
    except ValueError as exc:
        raise ConfigError(f"invalid grid {value!r}: {exc}") from exc
    if not grid:
        raise ConfigError("grid must contain at least one value")
    return grid


def _cmd_diff(args) -> int:
    extract_dv(args.base, args.finetuned, out=args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_merge(args) -> int:
    dvs = _parse_labeled(args.dv, "--dv")
    weights = _load_weights(args.weights)
    compose_dem(args.base, dvs, weights, out=args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_interp(args) -> int:
    models = _parse_labeled(args.model, "--model")
    weights = _load_weights(args.weights)
    interpolate(models, weights, out=args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_search(args) -> int:
    dvs = _parse_labeled(args.dv, "--dv")
    common = {"workdir": args.workdir, "keep": args.keep, "jobs": args.jobs}
    if args.strategy == "grid":
        grid = _parse_grid(args.grid) if args.grid else DEFAULT_GRID
        report = grid_search_single_coeff(args.base, dvs, grid,
                                          args.evaluator, **common)
        print(f"best omega = {report.best.weights.entries[0][1]}")
    else:
        report = random_search(args.base, dvs, args.trials, args.seed,
                               args.evaluator, args.mode, **common)
        print("best weights = "
              + json.dumps(report.best.weights.as_mapping()))
    print(f"best objective = {report.best.result.objective}")
    _write_text_atomic(args.output, report.to_json())
    print(f"wrote {args.output}")
    return EXIT_OK


def _cmd_analyze(args) -> int:
    models = _parse_labeled(args.model, "--model")
    dvs = _parse_labeled(args.dv, "--dv")
    dem_weights = _load_weights(args.dem_weights) if args.dem_weights else None
    report = analytics_report(args.base, models, dvs, dem_weights=dem_weights,
                              layer_pattern=args.layer_pattern)
    out = Path(args.output)
    _write_text_atomic(out, json.dumps(report, indent=2) + "\n")
    print(f"wrote {out}")
    if not args.no_csv:
        stem = out.with_suffix("") if out.suffix == ".json" else out
        for section, text in report_csv_sections(report).items():
            csv_path = Path(f"{stem}.{section}.csv")
            _write_text_atomic(csv_path, text)
            print(f"wrote {csv_path}")
    return EXIT_OK


def _cmd_cost(args) -> int:
    scenario = (load_scenario(args.scenario) if args.scenario
                else reference_scenario())
    report = cost_report(scenario)
    sys.stdout.write(format_cost_report(report))
    if args.json:
        _write_text_atomic(args.json, json.dumps(report, indent=2) + "\n")
        print(f"wrote {args.json}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="demerge",
        description="Merge fine-tuned checkpoints by distribution-vector "
                    "arithmetic, search merge weights, and analyze/cost the "
                    "procedure.")
    parser.add_argument(
        "--version", action="version",
        version=f"demerge {__version__} (DEMCKPT format version "
                f"{FORMAT_VERSION})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diff", help="extract a distribution vector "
                                    "(finetuned minus base)")
    p.add_argument("base")
    p.add_argument("finetuned")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_diff)

    p = sub.add_parser("merge", help="compose base + weighted distribution "
                                     "vectors")
    p.add_argument("base")
    p.add_argument("--dv", action="append", metavar="LABEL=PATH")
    p.add_argument("--weights", required=True,
                   help="inline JSON or path to a weight-config file")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_merge)

    p = sub.add_parser("interp", help="weighted average of models "
                                      "(weights sum to 1)")
    p.add_argument("--model", action="append", metavar="LABEL=PATH",
                   required=True)
    p.add_argument("--weights", required=True,
                   help="inline JSON or path to a weight-config file")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_interp)

    p = sub.add_parser("search", help="search merge weights with an external "
                                      "evaluator")
    strategies = p.add_subparsers(dest="strategy", required=True)
    for name in ("grid", "random"):
        sp = strategies.add_parser(name)
        sp.add_argument("base")
        sp.add_argument("--dv", action="append", metavar="LABEL=PATH",
                        required=True)
        sp.add_argument("--evaluator", required=True,
                        help="command run as: CMD ... CANDIDATE_PATH")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--keep", action="store_true",
                        help="keep candidate checkpoint files")
        sp.add_argument("--workdir", help="directory for candidate files "
                                          "(default: a temporary directory)")
        sp.add_argument("-o", "--output", default="search_report.json")
        if name == "grid":
            sp.add_argument("--grid", help="comma-separated coefficient "
                                           "values (default "
                                           + ",".join(str(v) for v in DEFAULT_GRID)
                                           + ")")
        else:
            sp.add_argument("-k", "--trials", type=int, default=50)
            sp.add_argument("--seed", type=int, default=DEFAULT_SEED)
            sp.add_argument("--mode", choices=("dem", "interpolation"),
                            default="dem")
        sp.set_defaults(func=_cmd_search)

    p = sub.add_parser("analyze", help="distance/cosine/layer-wise report")
    p.add_argument("base")
    p.add_argument("--model", action="append", metavar="LABEL=PATH")
    p.add_argument("--dv", action="append", metavar="LABEL=PATH")
    p.add_argument("--layer-pattern", default=DEFAULT_LAYER_PATTERN)
    p.add_argument("--dem-weights", metavar="JSON_OR_PATH",
                   help="weights for the combined-vector rows "
                        "(default: 0.25 each)")
    p.add_argument("--no-csv", action="store_true",
                   help="write only the JSON report")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("cost", help="gpu-hour comparison report")
    p.add_argument("--scenario", help="scenario JSON file (default: built-in "
                                      "7B reference numbers)")
    p.add_argument("--json", help="also write the report as JSON to this path")
    p.set_defaults(func=_cmd_cost)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(exc, EXIT_USAGE)
    except _DATA_ERRORS as exc:
        return _fail(exc, EXIT_DATA)
    except _EVALUATOR_ERRORS as exc:
        return _fail(exc, EXIT_EVALUATOR)


if __name__ == "__main__":
    sys.exit(main())
