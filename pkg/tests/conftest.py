from __future__ import annotations

import copy
from pathlib import Path

import pytest
import yaml

from dualbench.model import AppTiming, InitTiming, MessageSizeSeries, NcclTable

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text()


# -- render helpers: generate benchmark output in the pinned grammars ---------------


def render_init(t: InitTiming) -> str:
    return (f"# OSU MPI Init Test\nnprocs: {t.nprocs}, min: {t.min!r} ms, "
            f"max: {t.max!r} ms, avg: {t.avg!r} ms\n")


def render_latency(s: MessageSizeSeries) -> str:
    rows = "".join(f"{p.size} {p.latency!r}\n" for p in s.points)
    return "# OSU MPI Latency Test v7.3\n# Size          Latency (us)\n" + rows


def render_nccl(t: NcclTable) -> str:
    head = ("#       size         count      type   redop    root     time   algbw   busbw #wrong"
            "     time   algbw   busbw #wrong\n")
    rows = "".join(
        f"{r.size} {r.count} {r.dtype} {r.redop} -1 {r.oop_time!r} {r.oop_algbw!r} {r.oop_busbw!r} "
        f"{r.oop_wrong} {r.ip_time!r} {r.ip_algbw!r} {r.ip_busbw!r} {r.ip_wrong}\n"
        for r in t.rows
    )
    return head + rows + f"# Avg bus bandwidth    : {t.avg_busbw!r}\n"


def render_app(t: AppTiming) -> str:
    params = "".join(f"PARAM {k} {v!r}\n" for k, v in t.workload.items())
    return "simulator says hello\n" + params + f"SIMTIME {t.sim_seconds!r}\n"


# -- plans --------------------------------------------------------------------------------

BASE_PLAN = {
    "systems": [
        {
            "name": "karolina",
            "cores_per_node": 128,
            "gpus_per_node": 8,
            "nics_per_node": 4,
            "gpu_interconnect": {"kind": "nvlink", "width": 12},
            "nic_gpu_affinity": [[0, 0, "PXB"], [1, 0, "PXB"], [2, 1, "PXB"], [3, 1, "PXB"],
                                 [4, 2, "PXB"], [5, 2, "PXB"], [6, 3, "PXB"], [7, 3, "PXB"]],
            "account": "OPEN-00-00",
            "partition": "qgpu",
            "modules": ["module load OpenMPI/5.0.3", "module load NCCL"],
            "image": "/images/esd.sif",
        }
    ],
    "benchmarks": [],
    "environments": ["native", "container"],
}


def make_plan(benchmarks=(), **extra) -> dict:
    plan = copy.deepcopy(BASE_PLAN)
    plan["benchmarks"] = [dict(b) for b in benchmarks]
    plan.update(copy.deepcopy(extra))
    return plan


def write_plan(path: Path, plan: dict) -> Path:
    path.write_text(yaml.safe_dump(plan, sort_keys=False))
    return path


def write_result(root: Path, system: str, env: str, bench: str, nodes: int, rep: int,
                 text: str, trace: str | None = None) -> Path:
    d = root / system / env / bench
    d.mkdir(parents=True, exist_ok=True)
    p = d / f"{nodes}n_r{rep}.log"
    p.write_text(text)
    if trace is not None:
        (d / f"{nodes}n_r{rep}.trace").write_text(trace)
    return p


# -- acceptance summary --------------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"AC{n:>2} {'PASS' if ok else 'FAIL'}  {name}: {detail}")


@pytest.fixture
def karolina_plan_dict():
    return make_plan()


# -- synthetic campaigns -----------------------------------------------------------------

ARBOR_STRONG = {"native": {1: 2435.0, 2: 1230.0, 128: 28.2},
                "container": {1: 2391.0, 2: 1210.0, 128: 29.8}}

# container 2% slower everywhere: constant relative overhead inside default thresholds
ARBOR_CLEAN = {"native": ARBOR_STRONG["native"],
               "container": {n: t * 1.02 for n, t in ARBOR_STRONG["native"].items()}}

INIT_FASTER = {"native": {1: 400.0, 2: 450.0}, "container": {1: 300.0, 2: 320.0}}


def campaign_plan(tracing=False) -> dict:
    entries = [
        {"kind": "strong", "app": "arbor", "system": "karolina", "nodes": [1, 2, 128],
         "tasks_per_node": 128, "command": "arbor-ring"},
        {"kind": "osu_init", "system": "karolina", "nodes": [1, 2], "tasks_per_node": 128},
    ]
    extra = {"tracing": {"ucx": True, "nccl": True}} if tracing else {}
    return make_plan(entries, **extra)


def fill_campaign(root: Path, trace: str | None = None, arbor=ARBOR_CLEAN) -> Path:
    """Write every result of :func:`campaign_plan`; ``trace`` goes next to each init run."""
    for env, times in arbor.items():
        for n, t in times.items():
            write_result(root, "karolina", env, "arbor_strong", n, 0, render_app(AppTiming("arbor", t)))
    for env, times in INIT_FASTER.items():
        for n, t in times.items():
            write_result(root, "karolina", env, "osu_init", n, 0,
                         render_init(InitTiming(128 * n, t * 0.9, t * 1.1, t)), trace)
    return root
