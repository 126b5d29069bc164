"""Command-line entry point: plan -> jobs -> ingest -> analyze -> verify -> report.

Exit codes: 0 pass, 1 failing findings (or warnings under ``--strict``),
2 usage/parse/validation errors, 3 I/O errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import harness, pipeline, report
from .verdict import Status

log = logging.getLogger("dualbench")

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


class _Exit(Exception):
    def __init__(self, code: int, message: str = ""):
        self.code = code
        super().__init__(message)


def _status_code(status: Status, strict: bool) -> int:
    if status is Status.FAIL:
        return EXIT_FAIL
    if status is Status.PASS_WITH_WARNINGS and strict:
        return EXIT_FAIL
    return EXIT_PASS


def _load_plan(path: str | None) -> harness.Plan:
    if not path:
        raise _Exit(EXIT_USAGE, "--plan is required")
    try:
        return harness.load_plan(path)
    except harness.PlanValidationError as exc:
        raise _Exit(EXIT_USAGE, "invalid plan:\n" + "\n".join(f"  {p}" for p in exc.problems))
    except harness.PlanError as exc:
        raise _Exit(EXIT_USAGE, f"cannot parse plan: {exc}")
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read plan: {exc}")


def _manifest_path(args: argparse.Namespace) -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    if args.results:
        return Path(args.results) / harness.MANIFEST_NAME
    raise _Exit(EXIT_USAGE, "--manifest or --results is required")


def _read_manifest(args: argparse.Namespace) -> harness.Manifest:
    path = _manifest_path(args)
    try:
        return harness.read_manifest(path)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read manifest: {exc}")
    except (ValueError, KeyError) as exc:
        raise _Exit(EXIT_USAGE, f"bad manifest {path}: {exc}")


def _profile_overrides(args: argparse.Namespace) -> dict[str, Any] | None:
    if not args.profile:
        return None
    try:
        data = yaml.safe_load(Path(args.profile).read_text())
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot read profile: {exc}")
    except yaml.YAMLError as exc:
        raise _Exit(EXIT_USAGE, f"cannot parse profile: {exc}")
    if isinstance(data, dict) and set(data) == {"verify"}:
        data = data["verify"]
    if data is not None and not isinstance(data, dict):
        raise _Exit(EXIT_USAGE, "profile file must be a mapping")
    return data


def _evaluate(args: argparse.Namespace) -> pipeline.Evaluation:
    manifest = _read_manifest(args)
    try:
        plan = manifest.load_plan()
        profile = plan.profile(_profile_overrides(args))
    except (harness.PlanError, ValueError) as exc:
        raise _Exit(EXIT_USAGE, f"invalid verification profile: {exc}")
    return pipeline.evaluate(manifest, profile, plan)


# -- commands -------------------------------------------------------------------------


def cmd_plan_validate(args: argparse.Namespace) -> int:
    plan = _load_plan(args.plan)
    n = len(harness.expand_matrix(plan))
    print(f"plan OK: {len(plan.systems)} systems, {len(plan.benchmarks)} benchmarks, {n} jobs")
    return EXIT_PASS


def cmd_jobs_gen(args: argparse.Namespace) -> int:
    plan = _load_plan(args.plan)
    out = Path(args.out or "jobs")
    try:
        written = harness.write_job_scripts(plan, out)
    except harness.UnsupportedBenchmark as exc:
        raise _Exit(EXIT_USAGE, str(exc))
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write job scripts: {exc}")
    print(f"wrote {len(written)} job scripts to {out}")
    return EXIT_PASS


def cmd_ingest(args: argparse.Namespace) -> int:
    plan = _load_plan(args.plan)
    if not args.results:
        raise _Exit(EXIT_USAGE, "--results is required")
    try:
        manifest = harness.ingest(args.results, plan, ruleset_base=Path(args.plan).parent)
        path = harness.write_manifest(manifest, Path(args.results) / harness.MANIFEST_NAME)
    except harness.ManifestConflict as exc:
        raise _Exit(EXIT_IO, str(exc))
    except ValueError as exc:
        raise _Exit(EXIT_USAGE, f"bad transport ruleset: {exc}")
    except OSError as exc:
        raise _Exit(EXIT_IO, f"ingest failed: {exc}")
    print(f"ingested {len(manifest.records)} runs into {path}: {len(manifest.unmatched)} unmatched, "
          f"{len(manifest.missing)} missing, {len(manifest.errors)} unparseable")
    for p in manifest.unmatched:
        print(f"  unmatched: {p}")
    for p in manifest.missing:
        print(f"  missing:   {p}")
    for p, e in manifest.errors:
        print(f"  error:     {p}: {e}")
    return EXIT_PASS


def cmd_analyze(args: argparse.Namespace) -> int:
    ev = _evaluate(args)
    for line in pipeline.analysis_lines(ev):
        print(line)
    return EXIT_PASS


def cmd_verify(args: argparse.Namespace) -> int:
    ev = _evaluate(args)
    doc = ev.document()
    for f in doc.findings:
        if f.severity or args.verbose:
            print(f"{f.severity.label.upper():5} {f.id}: {f.evidence}")
    print(f"status: {doc.status.value}")
    return _status_code(doc.status, args.strict)


def _write_reports(doc: report.ReportDocument, out: Path, formats: list[str]) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        p = out / "report.json"
        p.write_text(report.emit_json(doc))
        written.append(p)
    if "md" in formats:
        p = out / "report.md"
        p.write_text(report.emit_markdown(doc))
        written.append(p)
    if "csv" in formats:
        written += report.emit_plot_csv(doc, out / "plots")
    return written


def cmd_report(args: argparse.Namespace) -> int:
    doc = _evaluate(args).document()
    try:
        written = _write_reports(doc, Path(args.out or "report"), args.formats)
    except OSError as exc:
        raise _Exit(EXIT_IO, f"cannot write report: {exc}")
    print(f"wrote {len(written)} files; status: {doc.status.value}")
    return _status_code(doc.status, args.strict)


def cmd_run_all(args: argparse.Namespace) -> int:
    cmd_plan_validate(args)
    cmd_ingest(args)
    cmd_analyze(args)
    cmd_verify(args)
    return cmd_report(args)


# -- parser ---------------------------------------------------------------------------


def _formats(value: str) -> list[str]:
    fmts = [v.strip() for v in value.split(",") if v.strip()]
    bad = set(fmts) - {"json", "md", "csv"}
    if bad:
        raise argparse.ArgumentTypeError(f"unknown formats {sorted(bad)}")
    return fmts


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    sup = argparse.SUPPRESS
    common.add_argument("--plan", default=sup, help="plan file (YAML)")
    common.add_argument("--results", default=sup, help="results root holding <system>/<env>/...")
    common.add_argument("--manifest", default=sup, help="manifest path (default <results>/manifest.jsonl)")
    common.add_argument("--out", default=sup, help="output directory")
    common.add_argument("--strict", action="store_true", default=sup,
                        help="treat warnings as failures in the exit code")
    common.add_argument("--profile", default=sup, help="YAML file overriding the plan's verify section")
    common.add_argument("-v", "--verbose", action="store_true", default=sup)

    parser = argparse.ArgumentParser(prog="dualbench", parents=[common],
                                     description="Native vs. container HPC benchmark campaigns.")
    sub = parser.add_subparsers(dest="command", required=True)

    plan = sub.add_parser("plan", help="plan utilities")
    plan_sub = plan.add_subparsers(dest="plan_command", required=True)
    plan_sub.add_parser("validate", parents=[common], help="validate a plan file").set_defaults(
        func=cmd_plan_validate)

    jobs = sub.add_parser("jobs", help="job-script utilities")
    jobs_sub = jobs.add_subparsers(dest="jobs_command", required=True)
    jobs_sub.add_parser("gen", parents=[common], help="write one Slurm script per job").set_defaults(
        func=cmd_jobs_gen)

    sub.add_parser("ingest", parents=[common], help="parse results into a manifest").set_defaults(
        func=cmd_ingest)
    sub.add_parser("analyze", parents=[common], help="print derived metrics").set_defaults(
        func=cmd_analyze)
    sub.add_parser("verify", parents=[common], help="print findings; exit code reflects the verdict"
                   ).set_defaults(func=cmd_verify)
    for name, func in (("report", cmd_report), ("run-all", cmd_run_all)):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--formats", type=_formats, default=["json", "md", "csv"],
                       help="comma-separated subset of json,md,csv")
        p.set_defaults(func=func)
    return parser


_DEFAULTS = {"plan": None, "results": None, "manifest": None, "out": None, "strict": False,
             "profile": None, "verbose": False}


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    for k, v in _DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    try:
        return args.func(args)
    except _Exit as exc:
        if str(exc):
            print(str(exc), file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
