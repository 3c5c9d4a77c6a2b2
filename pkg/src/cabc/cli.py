"""Command-line entry points.

    cabc run --config experiment.json     # config-driven pipeline
    cabc oracle-check --n 16              # quick DtN oracle agreement check
    cabc version

Exit codes: 0 success, 2 config error, 3 numeric failure.  The environment
variable CABC_OUT overrides the output directory.
"""

import argparse
import json
import sys

from . import __version__
from .experiments import ConfigError, NumericFailure, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _cmd_run(args) -> int:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        report = run(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(report.to_json())
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    cfg = {
        "experiment": "OracleCheck",
        "n": args.n,
        "medium": args.medium,
        "pml_width_w": args.w,
    }
    try:
        report = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(report.to_json())
    if report.metrics["max_pairwise"] > args.tol:
        print(
            f"numeric failure: oracle discrepancy {report.metrics['max_pairwise']:.3e} > {args.tol:.1e}",
            file=sys.stderr,
        )
        return EXIT_NUMERIC
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="cabc", description="Compressed absorbing boundary conditions")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a JSON config")
    p_run.add_argument("--config", required=True, help="path to the experiment config")
    p_run.set_defaults(fn=_cmd_run)

    p_oc = sub.add_parser("oracle-check", help="check the three DtN constructions agree")
    p_oc.add_argument("--n", type=int, default=16)
    p_oc.add_argument("--w", type=int, default=None, help="layer width in cells")
    p_oc.add_argument("--medium", default="Uniform")
    p_oc.add_argument("--tol", type=float, default=1e-8)
    p_oc.set_defaults(fn=_cmd_oracle_check)

    p_ver = sub.add_parser("version", help="print the package version")
    p_ver.set_defaults(fn=lambda args: (print(__version__), EXIT_OK)[1])

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
