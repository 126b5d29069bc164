"""Campaign plans, Slurm job scripts, result ingestion and the manifest."""

from __future__ import annotations

import hashlib
import json
import os
import re
import shlex
import tempfile
from dataclasses import dataclass, field
from pathlib import Path, PurePosixPath
from typing import Any, Literal, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError
from pydantic import field_validator, model_validator

from . import parsers
from .model import (
    Benchmark,
    Environment,
    Family,
    Interconnect,
    NicAffinity,
    Proximity,
    RunRecord,
    SystemDescriptor,
    duplicate_repetitions,
    record_from_dict,
    record_to_dict,
    validate_run,
)
from .verdict import ExpectationProfile

MANIFEST_NAME = "manifest.jsonl"
MANIFEST_VERSION = 1


class PlanError(Exception):
    pass


class PlanParseError(PlanError):
    def __init__(self, location: str, message: str):
        self.location = location
        super().__init__(f"{location}: {message}")


class PlanValidationError(PlanError):
    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


class UnsupportedBenchmark(ValueError):
    pass


class ManifestConflict(OSError):
    pass


# -- plan schema ---------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class InterconnectSpec(_Strict):
    kind: Interconnect = Interconnect.NONE
    width: int = Field(default=0, ge=0)


class SystemSpec(_Strict):
    name: str = Field(pattern=r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")
    cores_per_node: int = Field(ge=1)
    gpus_per_node: int = Field(default=0, ge=0)
    nics_per_node: int = Field(default=1, ge=0)
    gpu_interconnect: InterconnectSpec = InterconnectSpec()
    nic_gpu_affinity: list[tuple[int, int, Proximity]] = []
    account: str | None = None
    partition: str | None = None
    modules: list[str] = []
    image: str | None = None
    extra_srun_flags: list[str] = []

    @field_validator("nic_gpu_affinity", mode="before")
    @classmethod
    def _proximity_names(cls, v: Any) -> Any:
        if isinstance(v, list):
            return [
                (e[0], e[1], Proximity[e[2]]) if isinstance(e, (list, tuple)) and len(e) == 3
                and isinstance(e[2], str) else e
                for e in v
            ]
        return v

    def descriptor(self) -> SystemDescriptor:
        return SystemDescriptor(
            name=self.name,
            cores_per_node=self.cores_per_node,
            gpus_per_node=self.gpus_per_node,
            nics_per_node=self.nics_per_node,
            gpu_interconnect=self.gpu_interconnect.kind,
            nvlink_width=self.gpu_interconnect.width,
            nic_gpu_affinity=tuple(NicAffinity(g, n, p) for g, n, p in self.nic_gpu_affinity),
        )


class PerNode(_Strict):
    """A workload parameter proportional to the node count: ``per_node * N``."""

    per_node: float


WorkloadRule = Union[int, float, PerNode]


def resolve_rule(rule: WorkloadRule, nodes: int) -> int | float:
    if isinstance(rule, PerNode):
        v = rule.per_node * nodes
    else:
        v = rule
    return int(v) if float(v).is_integer() else float(v)


class BenchmarkEntry(_Strict):
    kind: Family
    system: str
    app: str | None = None
    nodes: list[int] = Field(min_length=1)
    tasks_per_node: int = Field(default=1, ge=1)
    gpus: int = Field(default=0, ge=0)
    repetitions: int = Field(default=1, ge=1)
    command: str | None = None
    workload: dict[str, WorkloadRule] = {}

    @field_validator("nodes")
    @classmethod
    def _increasing(cls, v: list[int]) -> list[int]:
        if any(n < 1 for n in v):
            raise ValueError("node counts must be >= 1")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"node counts must be strictly increasing, got {v}")
        return v

    @field_validator("workload")
    @classmethod
    def _param_names(cls, v: dict[str, Any]) -> dict[str, Any]:
        for name in v:
            if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", name):
                raise ValueError(f"invalid parameter name {name!r}")
        return v

    @model_validator(mode="after")
    def _app_matches_kind(self) -> BenchmarkEntry:
        Benchmark(self.kind, self.app)  # raises ValueError on a mismatch
        return self

    @property
    def benchmark(self) -> Benchmark:
        return Benchmark(self.kind, self.app)


class TracingSpec(_Strict):
    ucx: bool = False
    nccl: bool = False
    ruleset: str | None = None


class Plan(_Strict):
    systems: list[SystemSpec] = Field(min_length=1)
    benchmarks: list[BenchmarkEntry] = []
    environments: list[Literal["native", "container"]] = ["native", "container"]
    tracing: TracingSpec = TracingSpec()
    verify: dict[str, Any] = {}

    @model_validator(mode="after")
    def _cross_checks(self) -> Plan:
        names = [s.name for s in self.systems]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate system names in {names}")
        if len(set(self.environments)) != len(self.environments) or not self.environments:
            raise ValueError("environments must be a non-empty list without duplicates")
        by_name = {s.name: s for s in self.systems}
        seen = set()
        for i, b in enumerate(self.benchmarks):
            sys = by_name.get(b.system)
            if sys is None:
                raise ValueError(f"benchmarks[{i}] references undeclared system {b.system!r}")
            key = (b.system, b.benchmark.slug)
            if key in seen:
                raise ValueError(f"benchmarks[{i}]: {b.benchmark.slug} on {b.system} declared twice")
            seen.add(key)
            if b.gpus > sys.gpus_per_node:
                raise ValueError(f"benchmarks[{i}] requests {b.gpus} GPUs, {b.system} has {sys.gpus_per_node}")
            if b.tasks_per_node > sys.cores_per_node:
                raise ValueError(f"benchmarks[{i}] requests {b.tasks_per_node} tasks per node, "
                                 f"{b.system} has {sys.cores_per_node} cores")
            if "container" in self.environments and not sys.image:
                raise ValueError(f"system {sys.name} needs an image for container runs")
        for s in self.systems:
            s.descriptor()
        ExpectationProfile().with_overrides(self.verify)
        return self

    def system(self, name: str) -> SystemSpec:
        return next(s for s in self.systems if s.name == name)

    @property
    def descriptors(self) -> dict[str, SystemDescriptor]:
        return {s.name: s.descriptor() for s in self.systems}

    def profile(self, overrides: dict[str, Any] | None = None) -> ExpectationProfile:
        return ExpectationProfile().with_overrides(self.verify).with_overrides(overrides)

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def plan_from_mapping(data: Any, where: str = "<plan>") -> Plan:
    if not isinstance(data, dict):
        raise PlanParseError(where, "top level must be a mapping")
    try:
        return Plan.model_validate(data)
    except PydanticValidationError as exc:
        problems = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "plan"
            problems.append(f"{loc}: {err['msg']}")
        raise PlanValidationError(problems) from None


def load_plan(path: str | Path) -> Plan:
    """Read and validate a YAML (or JSON) plan file.

    ``OSError`` propagates for unreadable files.
    """
    path = Path(path)
    text = path.read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        loc = f"{path}:{mark.line + 1}:{mark.column + 1}" if mark else str(path)
        raise PlanParseError(loc, str(exc.problem)) from None
    except yaml.YAMLError as exc:
        raise PlanParseError(str(path), str(exc)) from None
    return plan_from_mapping(data, str(path))


# -- matrix ------------------------------------------------------------------------------


@dataclass(frozen=True)
class JobSpec:
    system: str
    environment: Environment
    benchmark: Benchmark
    nodes: int
    tasks_per_node: int
    gpus: int
    repetition: int
    workload: dict[str, int | float] = field(default_factory=dict)
    command: str | None = None

    @property
    def output_path(self) -> PurePosixPath:
        return PurePosixPath("results", *self.result_key[:3], f"{self.nodes}n_r{self.repetition}.log")

    @property
    def trace_path(self) -> PurePosixPath:
        return self.output_path.with_suffix(".trace")

    @property
    def result_key(self) -> tuple[str, str, str, int, int]:
        return (self.system, self.environment.label, self.benchmark.slug, self.nodes, self.repetition)

    @property
    def script_name(self) -> str:
        s, e, b, n, r = self.result_key
        return f"{s}_{e}_{b}_{n}n_r{r}.job"


def expand_matrix(plan: Plan) -> list[JobSpec]:
    """Entries x node counts x environments x repetitions, in plan order."""
    specs = []
    for entry in plan.benchmarks:
        sys = plan.system(entry.system)
        envs = [Environment.container(sys.image) if e == "container" else Environment.native()
                for e in plan.environments]
        for n in entry.nodes:
            workload = {k: resolve_rule(v, n) for k, v in sorted(entry.workload.items())}
            for env in envs:
                for rep in range(entry.repetitions):
                    specs.append(JobSpec(entry.system, env, entry.benchmark, n, entry.tasks_per_node,
                                         entry.gpus, rep, workload, entry.command))
    return specs


# -- job scripts ---------------------------------------------------------------------------

_DEFAULT_COMMANDS = {
    Family.OSU_INIT: "osu_init",
    Family.OSU_LATENCY_INTRA: "osu_latency",
    Family.OSU_LATENCY_INTER: "osu_latency",
    Family.NCCL_ALLREDUCE_SINGLE: "all_reduce_perf -b 8 -e 4G -f 2 -g 1",
    Family.NCCL_ALLREDUCE_MULTI: "all_reduce_perf -b 8 -e 4G -f 2 -g 1",
}


def benchmark_command(spec: JobSpec) -> str:
    template = spec.command or _DEFAULT_COMMANDS.get(spec.benchmark.family)
    if template is None:
        raise UnsupportedBenchmark(f"no command template for {spec.benchmark.slug}")
    try:
        return template.format(nodes=spec.nodes, **spec.workload)
    except (KeyError, IndexError) as exc:
        raise UnsupportedBenchmark(f"{spec.benchmark.slug}: command references unknown {exc}") from None


def render_job_script(spec: JobSpec, plan: Plan) -> str:
    sys = plan.system(spec.system)
    cmd = benchmark_command(spec)
    out = spec.output_path
    name = spec.script_name.removesuffix(".job")

    lines = ["#!/bin/bash", f"#SBATCH --job-name={name}", f"#SBATCH --nodes={spec.nodes}",
             f"#SBATCH --ntasks-per-node={spec.tasks_per_node}"]
    if spec.gpus > 0:
        lines.append(f"#SBATCH --gpus-per-node={spec.gpus}")
    if sys.account:
        lines.append(f"#SBATCH --account={sys.account}")
    if sys.partition:
        lines.append(f"#SBATCH --partition={sys.partition}")
    lines += [f"#SBATCH --output={out}", "", "set -u", f"mkdir -p {shlex.quote(str(out.parent))}"]

    trace = plan.tracing.ucx or plan.tracing.nccl
    if trace:
        tdir = shlex.quote(f"{spec.trace_path}.d")
        lines += ["", f"TRACE_DIR={tdir}", 'mkdir -p "$TRACE_DIR"']
        if plan.tracing.ucx:
            lines += ["export UCX_LOG_LEVEL=info", 'export UCX_LOG_FILE="$TRACE_DIR/ucx.%h.%p.log"']
        if plan.tracing.nccl:
            lines += ["export NCCL_DEBUG=INFO", "export NCCL_DEBUG_SUBSYS=INIT,GRAPH,NET,P2P",
                      'export NCCL_DEBUG_FILE="$TRACE_DIR/nccl.%h.%p.log"']

    lines.append("")
    if spec.environment.is_container:
        nv = " --nv" if spec.gpus > 0 else ""
        launcher = f"apptainer exec{nv} {shlex.quote(spec.environment.image_id)} "
    else:
        lines += sys.modules
        launcher = ""
    srun = " ".join(["srun", "--mpi=pmix", *sys.extra_srun_flags])
    run = f"{srun} {launcher}{cmd}"

    if spec.benchmark.family.is_app:
        lines += [f"echo 'PARAM {k} {v}'" for k, v in spec.workload.items()]
        lines += [
            "start=$(date +%s.%N)",
            run,
            "status=$?",
            "end=$(date +%s.%N)",
            'if [ "$status" -eq 0 ]; then',
            '  awk -v s="$start" -v e="$end" \'BEGIN { printf "SIMTIME %.3f\\n", e - s }\'',
            "fi",
        ]
    else:
        lines += [run, "status=$?"]

    if trace:
        lines.append(f'cat "$TRACE_DIR"/*.log > {shlex.quote(str(spec.trace_path))} 2>/dev/null || true')
    lines += ['exit "$status"', ""]
    return "\n".join(lines)


def write_job_scripts(plan: Plan, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for spec in expand_matrix(plan):
        path = out_dir / spec.script_name
        path.write_text(render_job_script(spec, plan))
        written.append(path)
    return written


# -- ingest and manifest ---------------------------------------------------------------------

_LOG_NAME = re.compile(r"^(\d+)n_r(\d+)\.(log|trace)$")


@dataclass
class Manifest:
    plan: dict[str, Any]
    plan_digest: str
    records: list[RunRecord] = field(default_factory=list)
    unmatched: list[str] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)
    violations: list[tuple[str, str]] = field(default_factory=list)

    def load_plan(self) -> Plan:
        return plan_from_mapping(self.plan)

    def lines(self) -> list[str]:
        def dump(obj: Any) -> str:
            return json.dumps(obj, sort_keys=True, separators=(",", ":"))

        out = [dump({"version": MANIFEST_VERSION, "plan_digest": self.plan_digest, "plan": self.plan})]
        out += [dump({"kind": "record", **record_to_dict(r)}) for r in self.records]
        out += [dump({"kind": "unmatched", "path": p}) for p in self.unmatched]
        out += [dump({"kind": "missing", "path": p}) for p in self.missing]
        out += [dump({"kind": "error", "path": p, "error": e}) for p, e in self.errors]
        out += [dump({"kind": "violation", "path": p, "rule": v}) for p, v in self.violations]
        return out


def _parse_output(spec: JobSpec, text: str):
    fam = spec.benchmark.family
    if fam is Family.OSU_INIT:
        return parsers.parse_osu_init(text)
    if fam.is_latency:
        return parsers.parse_osu_latency(text)
    if fam.is_nccl:
        return parsers.parse_nccl_allreduce(text)
    return parsers.parse_app_timing(text, spec.benchmark.app)


def _ruleset(plan: Plan, system: SystemDescriptor, base: Path | None) -> parsers.TransportRuleset:
    rs = parsers.default_ruleset(system)
    if plan.tracing.ruleset:
        path = Path(plan.tracing.ruleset)
        if base is not None and not path.is_absolute():
            path = base / path
        rs = rs.extended(parsers.load_ruleset(path).rules)
    return rs


def ingest(results_root: str | Path, plan: Plan, ruleset_base: Path | None = None) -> Manifest:
    """Parse every result file under ``results_root`` against the plan's matrix.

    ``results_root`` holds ``<system>/<env>/<benchmark>/<N>n_r<rep>.log`` with
    optional ``.trace`` siblings. Stray files, parse failures and expected but
    absent results are listed in the manifest instead of aborting.
    """
    root = Path(results_root)
    if not root.is_dir():
        raise FileNotFoundError(f"results root {root} is not a directory")
    expected = {spec.result_key: spec for spec in expand_matrix(plan)}
    systems = plan.descriptors
    rulesets: dict[str, parsers.TransportRuleset] = {}
    m = Manifest(plan.model_dump(mode="json"), plan.digest())

    files = sorted(p for p in root.rglob("*") if p.is_file())
    found: set[tuple] = set()
    consumed_traces: set[Path] = set()
    for path in files:
        rel = path.relative_to(root).as_posix()
        if rel in (MANIFEST_NAME, MANIFEST_NAME + ".lock") or ".trace.d/" in rel:
            continue
        parts = PurePosixPath(rel).parts
        mt = _LOG_NAME.match(parts[-1]) if len(parts) == 4 else None
        if mt is None:
            m.unmatched.append(rel)
            continue
        key = (parts[0], parts[1], parts[2], int(mt.group(1)), int(mt.group(2)))
        spec = expected.get(key)
        if mt.group(3) == "trace":
            if spec is None or not path.with_suffix(".log").is_file():
                m.unmatched.append(rel)
            continue
        if spec is None:
            m.unmatched.append(rel)
            continue
        found.add(key)
        try:
            payload = _parse_output(spec, path.read_text())
        except parsers.ParseError as exc:
            m.errors.append((rel, f"{type(exc).__name__}: {exc}"))
            continue
        transport = None
        trace = path.with_suffix(".trace")
        if trace.is_file():
            consumed_traces.add(trace)
            if spec.system not in rulesets:
                rulesets[spec.system] = _ruleset(plan, systems[spec.system], ruleset_base)
            transport = tuple(parsers.parse_transport_log(trace.read_text(), rulesets[spec.system]))
        rec = RunRecord(spec.benchmark, spec.environment, spec.system, spec.nodes,
                        spec.tasks_per_node, spec.gpus, spec.repetition, payload, rel, transport)
        for v in validate_run(rec, systems[spec.system]):
            m.violations.append((rel, v))
        if spec.benchmark.family.is_app:
            declared = set(spec.workload)
            extra = sorted(set(payload.workload) - declared)
            if declared and extra:
                m.violations.append((rel, f"undeclared workload parameters {extra}"))
        m.records.append(rec)
    m.violations += [("", v) for v in duplicate_repetitions(m.records)]
    m.missing = sorted(str(spec.output_path.relative_to("results"))
                       for key, spec in expected.items() if key not in found)
    return m


def write_manifest(manifest: Manifest, path: str | Path) -> Path:
    """Write atomically; a concurrent writer holding the lock raises ``ManifestConflict``."""
    path = Path(path)
    lock = path.with_name(path.name + ".lock")
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise ManifestConflict(f"{lock} exists; another writer is active") from None
    try:
        os.close(fd)
        with tempfile.NamedTemporaryFile("w", dir=path.parent, delete=False,
                                         prefix=path.name, suffix=".tmp") as tmp:
            tmp.write("\n".join(manifest.lines()) + "\n")
        os.replace(tmp.name, path)
    finally:
        lock.unlink(missing_ok=True)
    return path


def read_manifest(path: str | Path) -> Manifest:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty manifest")
    head = json.loads(lines[0])
    if head.get("version") != MANIFEST_VERSION:
        raise ValueError(f"{path}: unsupported manifest version {head.get('version')!r}")
    m = Manifest(head["plan"], head["plan_digest"])
    for no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        entry = json.loads(line)
        kind = entry.pop("kind", None)
        if kind == "record":
            m.records.append(record_from_dict(entry))
        elif kind == "unmatched":
            m.unmatched.append(entry["path"])
        elif kind == "missing":
            m.missing.append(entry["path"])
        elif kind == "error":
            m.errors.append((entry["path"], entry["error"]))
        elif kind == "violation":
            m.violations.append((entry["path"], entry["rule"]))
        else:
            raise ValueError(f"{path}:{no}: unknown entry kind {kind!r}")
    return m
