"""Command line front end: run, validate, list, report.

Exit codes: 0 all judged metrics passed (or nothing to judge), 1 at least
one metric failed, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import yaml

from .scenarios import (
    ScenarioError,
    bundled_scenario_path,
    list_bundled_scenarios,
    load_scenario,
    run_scenario,
    validate_scenario,
)


def _resolve(name_or_path: str) -> Path:
    path = Path(name_or_path)
    if path.is_file():
        return path
    return bundled_scenario_path(name_or_path)


def _parse_tol(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ValueError(f"--tol expects NAME=VALUE, got {pair!r}")
        name, _, value = pair.partition("=")
        try:
            out[name] = float(value)
        except ValueError:
            raise ValueError(f"--tol expects NAME=VALUE with a numeric value, got {pair!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="worldflow",
        description="Propagate wave fields, integrate world bundles, and audit the results.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and judge its metrics")
    p_run.add_argument("scenario", help="bundled scenario name or a YAML path")
    p_run.add_argument("--outdir", default="runs", help="directory for run outputs")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--threads", type=int, default=1, help="worker threads for bundles")
    p_run.add_argument(
        "--tol",
        action="append",
        metavar="NAME=VALUE",
        help="override one metric threshold (repeatable)",
    )
    p_run.add_argument(
        "--figures", action="store_true", help="render figures after the run"
    )

    p_val = sub.add_parser("validate", help="check a scenario file without running it")
    p_val.add_argument("scenario", help="bundled scenario name or a YAML path")

    sub.add_parser("list", help="list bundled scenarios")

    p_rep = sub.add_parser("report", help="render tables and figures for a past run")
    p_rep.add_argument("rundir", help="directory containing summary.json")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "list":
        for name in list_bundled_scenarios():
            print(name)
        return 0

    if args.command == "validate":
        try:
            path = _resolve(args.scenario)
        except FileNotFoundError as exc:
            print(exc, file=sys.stderr)
            return 2
        with open(path) as fh:
            doc = yaml.safe_load(fh)
        errors = validate_scenario(doc) if isinstance(doc, dict) else ["document must be a mapping"]
        if errors:
            for err in errors:
                print(f"invalid: {err}", file=sys.stderr)
            return 2
        print(f"{path}: OK")
        return 0

    if args.command == "report":
        from .reporting import render_report

        try:
            table, written = render_report(args.rundir)
        except FileNotFoundError as exc:
            print(exc, file=sys.stderr)
            return 2
        print(table)
        for path in written:
            print(f"wrote {path}")
        return 0

    # run
    try:
        config = load_scenario(_resolve(args.scenario))
    except (FileNotFoundError, ScenarioError) as exc:
        if isinstance(exc, ScenarioError):
            for err in exc.errors:
                print(f"invalid: {err}", file=sys.stderr)
        else:
            print(exc, file=sys.stderr)
        return 2
    try:
        tol = _parse_tol(args.tol)
    except ValueError as exc:
        print(exc, file=sys.stderr)
        return 2
    outdir = Path(args.outdir) / config.name
    result = run_scenario(
        config,
        outdir=outdir,
        seed_override=args.seed,
        threads=args.threads,
        tol_overrides=tol,
    )
    from .reporting import metric_table, render_report

    if args.figures:
        table, written = render_report(outdir)
        print(table)
        for path in written:
            print(f"wrote {path}")
    else:
        print(metric_table(result.summary))
        print(f"wrote {outdir / 'summary.json'}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())
