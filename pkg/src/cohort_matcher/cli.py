"""Command-line interface: ``cohort-matcher <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import load_config, write_template
from .errors import CohortMatcherError, DataError, PipelineError
from .matcher import COMPARISON_SLUGS
from .report import ReportBundle
from .synthetic import generate_synthetic

# Tables written by each partial subcommand (prefix match).
SUBCOMMAND_TABLES = {
    "match": ("matching_", "composition", "k_selection", "propensity"),
    "balance": ("balance_", "k_selection"),
    "estimate": ("results", "ordered_tests"),
    "sensitivity": ("sensitivity_curves", "gamma_star"),
    "attrition": ("attrition",),
}
STAGE_FOR = {"match": "match", "balance": "match", "estimate": "estimate", "sensitivity": "sensitivity", "attrition": "attrition"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="PATH", help="YAML run configuration")
    p.add_argument("--seed", type=int, help="random seed for synthetic data")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument(
        "--comparison",
        choices=sorted(COMPARISON_SLUGS) + ["all"],
        default="all",
        help="restrict to one comparison",
    )
    p.add_argument("--outcome", metavar="NAME", help="restrict estimates and sensitivity to one outcome")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cohort-matcher", description="Matched cohort analysis of long-term health outcomes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a commented config template")
    p.add_argument("--out", metavar="PATH", default="cohort-matcher.yaml", help="template path")
    p.add_argument("--force", action="store_true", help="overwrite an existing file")

    p = sub.add_parser("simulate", help="write a synthetic cohort CSV and schema")
    p.add_argument("--config", metavar="PATH")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", metavar="DIR")

    for name, text in (
        ("match", "propensity models, matching and K selection"),
        ("balance", "balance tables for the selected matchings"),
        ("estimate", "effect estimates and ordered tests"),
        ("sensitivity", "sensitivity curves and Gamma*"),
        ("attrition", "outcome attrition models"),
        ("run", "full analysis and report bundle"),
    ):
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("report", help="check an existing bundle and print its report")
    p.add_argument("--out", metavar="DIR", default=None, help="bundle directory")
    p.add_argument("--config", metavar="PATH", help="config whose `out` names the bundle directory")
    return parser


def _config(args):
    overrides = {"seed": args.seed, "out": args.out}
    if getattr(args, "comparison", "all") != "all":
        overrides["comparisons"] = (COMPARISON_SLUGS[args.comparison],)
    return load_config(args.config, **overrides)


def _subset(bundle: ReportBundle, prefixes) -> ReportBundle:
    keep = [t for t in bundle.tables if any(t.name.startswith(p) for p in prefixes)]
    return ReportBundle(keep, "", bundle.status, bundle.failure, bundle.config)


def _write_partial(bundle: ReportBundle, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for t in bundle.tables:
        t.frame.to_csv(out / t.filename, index=False, float_format="%.10g", lineterminator="\n")
    manifest = bundle.manifest()
    manifest["report"] = None
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_init(args) -> int:
    path = Path(args.out)
    if path.exists() and not args.force:
        print(f"{path} exists; use --force to overwrite", file=sys.stderr)
        return 2
    write_template(path)
    print(f"wrote {path}")
    return 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, seed=args.seed, out=args.out)
    csv_path, schema_path = generate_synthetic(cfg.synthetic_spec(), cfg.seed, cfg.out)
    print(f"wrote {csv_path} and {schema_path}")
    return 0


def cmd_analysis(args) -> int:
    from .pipeline import run_pipeline

    cfg = _config(args)
    outcomes = None
    if args.outcome:
        if args.outcome not in cfg.outcomes:
            print(f"outcome {args.outcome!r} is not in the configured outcomes {list(cfg.outcomes)}", file=sys.stderr)
            return 2
        outcomes = (args.outcome,)
    out = Path(cfg.out)
    if args.command == "run":
        try:
            run_pipeline(cfg, str(out), outcomes=outcomes)
        except PipelineError as exc:
            print(f"error: {exc} (partial bundle in {out})", file=sys.stderr)
            return exc.exit_code
        print(f"wrote report bundle to {out}")
        return 0
    try:
        bundle = run_pipeline(cfg, None, through=STAGE_FOR[args.command], outcomes=outcomes)
    except PipelineError as exc:
        _write_partial(_subset(exc.bundle, SUBCOMMAND_TABLES[args.command]), out)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    _write_partial(_subset(bundle, SUBCOMMAND_TABLES[args.command]), out)
    print(f"wrote {args.command} tables to {out}")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out) if args.out else Path(load_config(args.config).out)
    manifest_path = out / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest in {out}; run `cohort-matcher run` first")
    manifest = json.loads(manifest_path.read_text())
    import pandas as pd

    problems = []
    for t in manifest["tables"]:
        path = out / t["file"]
        if not path.exists():
            problems.append(f"{t['file']}: missing")
            continue
        cols = list(pd.read_csv(path, nrows=0).columns)
        if cols != t["columns"]:
            problems.append(f"{t['file']}: columns changed")
        if not t["schema_ok"]:
            problems.append(f"{t['file']}: " + "; ".join(t["problems"]))
    report = out / "report.md"
    if report.exists():
        print(report.read_text(), end="")
    print(f"\nbundle status: {manifest['status']}; {len(manifest['tables'])} tables", file=sys.stderr)
    for p in problems:
        print(f"schema problem: {p}", file=sys.stderr)
    if problems:
        return 3
    return 0 if manifest["status"] == "complete" else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"init": cmd_init, "simulate": cmd_simulate, "report": cmd_report}
    try:
        return handlers.get(args.command, cmd_analysis)(args)
    except CohortMatcherError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
