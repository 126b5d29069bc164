"""Domain types shared by parsers, analytics, verdict, harness and report.

Units are fixed per field: milliseconds for MPI init timings, microseconds
for latency and NCCL time columns, seconds for application runtimes, bytes
for message sizes and GB/s for bandwidths. Conversions happen in the parsers.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Union


class Interconnect(str, enum.Enum):
    NVLINK = "nvlink"
    PCIE = "pcie"
    NONE = "none"


class Proximity(enum.IntEnum):
    """PCIe distance classes, ordered from closest to farthest."""

    PIX = 0
    PXB = 1
    NODE = 2
    SYS = 3


@dataclass(frozen=True)
class NicAffinity:
    gpu_index: int
    nic_index: int
    proximity: Proximity


@dataclass(frozen=True)
class SystemDescriptor:
    """Node topology of one cluster, as far as transport expectations need it."""

    name: str
    cores_per_node: int
    gpus_per_node: int = 0
    nics_per_node: int = 1
    gpu_interconnect: Interconnect = Interconnect.NONE
    nvlink_width: int = 0
    nic_gpu_affinity: tuple[NicAffinity, ...] = ()

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("system name must be non-empty")
        if self.cores_per_node < 1:
            raise ValueError(f"{self.name}: cores_per_node must be >= 1")
        if self.gpus_per_node < 0 or self.nics_per_node < 0:
            raise ValueError(f"{self.name}: device counts must be >= 0")
        if self.gpu_interconnect is Interconnect.NONE and self.gpus_per_node != 0:
            raise ValueError(f"{self.name}: gpu_interconnect 'none' requires gpus_per_node = 0")
        if self.gpu_interconnect is Interconnect.NVLINK and self.nvlink_width < 1:
            raise ValueError(f"{self.name}: an NVLink bond needs a width >= 1")
        if self.gpu_interconnect is not Interconnect.NVLINK and self.nvlink_width != 0:
            raise ValueError(f"{self.name}: nvlink_width is only meaningful for NVLink bonds")
        for aff in self.nic_gpu_affinity:
            if not 0 <= aff.gpu_index < self.gpus_per_node:
                raise ValueError(f"{self.name}: affinity gpu_index {aff.gpu_index} out of range")
            if not 0 <= aff.nic_index < self.nics_per_node:
                raise ValueError(f"{self.name}: affinity nic_index {aff.nic_index} out of range")

    @property
    def has_nvlink(self) -> bool:
        return self.gpu_interconnect is Interconnect.NVLINK

    def nics_for_gpu(self, gpu_index: int) -> list[NicAffinity]:
        """Affinity entries for one GPU, closest NIC first."""
        entries = [a for a in self.nic_gpu_affinity if a.gpu_index == gpu_index]
        return sorted(entries, key=lambda a: (a.proximity, a.nic_index))


@dataclass(frozen=True)
class ToolchainRecord:
    os: str
    compiler: str
    ucx: str
    pmix: str
    mpi: str
    cuda: str | None = None
    container_runtime: str | None = None
    containerized: bool = False

    def __post_init__(self) -> None:
        # The runtime (e.g. Apptainer) lives on the host, never inside the image.
        if self.containerized and self.container_runtime is not None:
            raise ValueError("a container toolchain cannot carry a container_runtime version")


@dataclass(frozen=True)
class Environment:
    """Native execution, or execution inside the container image ``image_id``."""

    image_id: str | None = None

    def __post_init__(self) -> None:
        if self.image_id is not None and not self.image_id:
            raise ValueError("container image_id must be non-empty")

    @classmethod
    def native(cls) -> Environment:
        return cls(None)

    @classmethod
    def container(cls, image_id: str) -> Environment:
        return cls(image_id)

    @property
    def is_container(self) -> bool:
        return self.image_id is not None

    @property
    def label(self) -> str:
        return "container" if self.is_container else "native"


class Family(str, enum.Enum):
    OSU_INIT = "osu_init"
    OSU_LATENCY_INTRA = "osu_latency_intra"
    OSU_LATENCY_INTER = "osu_latency_inter"
    NCCL_ALLREDUCE_SINGLE = "nccl_allreduce_single"
    NCCL_ALLREDUCE_MULTI = "nccl_allreduce_multi"
    APP_STRONG = "strong"
    APP_WEAK = "weak"

    @property
    def is_app(self) -> bool:
        return self in (Family.APP_STRONG, Family.APP_WEAK)

    @property
    def is_latency(self) -> bool:
        return self in (Family.OSU_LATENCY_INTRA, Family.OSU_LATENCY_INTER)

    @property
    def is_nccl(self) -> bool:
        return self in (Family.NCCL_ALLREDUCE_SINGLE, Family.NCCL_ALLREDUCE_MULTI)


@dataclass(frozen=True)
class Benchmark:
    family: Family
    app: str | None = None

    def __post_init__(self) -> None:
        if self.family.is_app:
            if not self.app or not self.app.replace("_", "").replace("-", "").isalnum():
                raise ValueError(f"application benchmarks need an identifier, got {self.app!r}")
        elif self.app is not None:
            raise ValueError(f"{self.family.value} does not take an application")

    @property
    def slug(self) -> str:
        """Directory/file-name form, e.g. ``osu_init`` or ``arbor_strong``."""
        if self.family.is_app:
            return f"{self.app}_{self.family.value}"
        return self.family.value

    @classmethod
    def from_slug(cls, slug: str) -> Benchmark:
        try:
            return cls(Family(slug))
        except ValueError:
            pass
        app, _, suffix = slug.rpartition("_")
        if suffix in (Family.APP_STRONG.value, Family.APP_WEAK.value) and app:
            return cls(Family(suffix), app)
        raise ValueError(f"unknown benchmark {slug!r}")

    def __str__(self) -> str:
        return self.slug


# -- payloads ---------------------------------------------------------------


@dataclass(frozen=True)
class InitTiming:
    nprocs: int
    min: float
    max: float
    avg: float


@dataclass(frozen=True)
class MessageSizePoint:
    size: int
    latency: float


@dataclass(frozen=True)
class MessageSizeSeries:
    points: tuple[MessageSizePoint, ...]

    @property
    def sizes(self) -> list[int]:
        return [p.size for p in self.points]

    def as_dict(self) -> dict[int, float]:
        return {p.size: p.latency for p in self.points}

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class NcclRow:
    size: int
    count: int
    dtype: str
    redop: str
    oop_time: float
    oop_algbw: float
    oop_busbw: float
    oop_wrong: int
    ip_time: float
    ip_algbw: float
    ip_busbw: float
    ip_wrong: int


@dataclass(frozen=True)
class NcclTable:
    rows: tuple[NcclRow, ...]
    avg_busbw: float


@dataclass(frozen=True)
class AppTiming:
    app: str
    sim_seconds: float
    workload: dict[str, float] = field(default_factory=dict)

    def __hash__(self) -> int:
        return hash((self.app, self.sim_seconds, tuple(sorted(self.workload.items()))))


Payload = Union[InitTiming, MessageSizeSeries, NcclTable, AppTiming]


class Scope(str, enum.Enum):
    INTRA_NODE_CPU = "intra_node_cpu"
    INTER_NODE_CPU = "inter_node_cpu"
    GPU_PEER_TO_PEER = "gpu_peer_to_peer"
    GPU_NETWORK = "gpu_network"


class Mechanism(str, enum.Enum):
    INFINIBAND_VERBS = "infiniband_verbs"
    TCP = "tcp"
    SHARED_MEMORY = "shared_memory"
    SELF = "self"
    NVLINK_P2P = "nvlink_p2p"
    PCIE_P2P = "pcie_p2p"
    IB_NET_GDRDMA = "ib_net_gdrdma"
    IB_NET_PLAIN = "ib_net_plain"
    UNKNOWN = "unknown"


class LogSource(str, enum.Enum):
    UCX = "ucx"
    NCCL = "nccl"


@dataclass(frozen=True)
class TransportObservation:
    scope: Scope
    mechanism: Mechanism
    raw_line: str
    source: LogSource
    raw_token: str | None = None  # only set for Mechanism.UNKNOWN

    def __post_init__(self) -> None:
        if not self.raw_line:
            raise ValueError("raw_line must be non-empty")
        if self.mechanism is Mechanism.UNKNOWN and not self.raw_token:
            raise ValueError("an unknown mechanism must keep the unmatched token")
        if self.mechanism is not Mechanism.UNKNOWN and self.raw_token is not None:
            raise ValueError("raw_token is reserved for unknown mechanisms")


_PAYLOAD_FOR_FAMILY: dict[Family, type] = {
    Family.OSU_INIT: InitTiming,
    Family.OSU_LATENCY_INTRA: MessageSizeSeries,
    Family.OSU_LATENCY_INTER: MessageSizeSeries,
    Family.NCCL_ALLREDUCE_SINGLE: NcclTable,
    Family.NCCL_ALLREDUCE_MULTI: NcclTable,
    Family.APP_STRONG: AppTiming,
    Family.APP_WEAK: AppTiming,
}


def payload_type(family: Family) -> type:
    return _PAYLOAD_FOR_FAMILY[family]


@dataclass(frozen=True)
class RunRecord:
    """One benchmark execution with its parsed output."""

    benchmark: Benchmark
    environment: Environment
    system: str
    nodes: int
    tasks_per_node: int
    gpus_per_node_used: int
    repetition: int
    payload: Payload
    source_path: str
    transport_log: tuple[TransportObservation, ...] | None = None

    @property
    def key(self) -> tuple[str, str, str, int]:
        return (self.system, self.benchmark.slug, self.environment.label, self.nodes)


def validate_run(record: RunRecord, system: SystemDescriptor) -> list[str]:
    """Return every rule the record breaks against ``system``; empty when valid.

    Each rule contributes at most one message, so a record breaking exactly
    one rule yields exactly one violation.
    """
    out: list[str] = []
    if record.system != system.name:
        out.append(f"record belongs to system {record.system!r}, checked against {system.name!r}")
    if record.nodes < 1:
        out.append(f"nodes must be >= 1, got {record.nodes}")
    if record.tasks_per_node < 1:
        out.append(f"tasks_per_node must be >= 1, got {record.tasks_per_node}")
    elif record.tasks_per_node > system.cores_per_node:
        out.append(
            f"tasks_per_node {record.tasks_per_node} exceeds {system.cores_per_node} cores per node"
        )
    if record.gpus_per_node_used < 0:
        out.append(f"gpus_per_node_used must be >= 0, got {record.gpus_per_node_used}")
    elif record.gpus_per_node_used > system.gpus_per_node:
        out.append(
            f"gpus_per_node_used {record.gpus_per_node_used} exceeds the "
            f"{system.gpus_per_node} GPUs per node of {system.name}"
        )
    if record.repetition < 0:
        out.append(f"repetition must be >= 0, got {record.repetition}")

    expected = payload_type(record.benchmark.family)
    if not isinstance(record.payload, expected):
        out.append(
            f"payload mismatch: {record.benchmark.slug} expects {expected.__name__}, "
            f"got {type(record.payload).__name__}"
        )
    else:
        out.extend(_payload_violations(record))
    return out


def _payload_violations(record: RunRecord) -> list[str]:
    p = record.payload
    out: list[str] = []
    if isinstance(p, InitTiming):
        if p.nprocs < 1:
            out.append(f"init nprocs must be >= 1, got {p.nprocs}")
        if min(p.min, p.avg, p.max) < 0:
            out.append("init timings must be >= 0")
        if not p.min <= p.avg <= p.max:
            out.append(f"init timings out of order: min {p.min}, avg {p.avg}, max {p.max}")
    elif isinstance(p, MessageSizeSeries):
        if not p.points:
            out.append("latency series is empty")
        if any(b.size <= a.size for a, b in zip(p.points, p.points[1:])):
            out.append("latency series sizes are not strictly increasing")
        if any(pt.latency <= 0 for pt in p.points):
            out.append("latency values must be > 0")
    elif isinstance(p, NcclTable):
        if not p.rows:
            out.append("NCCL table is empty")
        if any(b.size <= a.size for a, b in zip(p.rows, p.rows[1:])):
            out.append("NCCL sizes are not strictly increasing")
        bws = [p.avg_busbw]
        for r in p.rows:
            bws += [r.oop_algbw, r.oop_busbw, r.ip_algbw, r.ip_busbw]
        if any(bw < 0 for bw in bws):
            out.append("NCCL bandwidths must be >= 0")
        wrong = [r.size for r in p.rows if r.oop_wrong or r.ip_wrong]
        if wrong:
            out.append(f"NCCL reported wrong results at sizes {wrong}")
    elif isinstance(p, AppTiming):
        if p.sim_seconds <= 0:
            out.append(f"sim_seconds must be > 0, got {p.sim_seconds}")
        if p.app != record.benchmark.app:
            out.append(f"timing is for {p.app!r}, benchmark is {record.benchmark.app!r}")
    return out


def duplicate_repetitions(records: list[RunRecord]) -> list[str]:
    """Repetition indices must be unique per (benchmark, environment, system, nodes)."""
    seen: set[tuple[Any, ...]] = set()
    out = []
    for r in records:
        k = (*r.key, r.repetition)
        if k in seen:
            out.append(f"duplicate repetition {r.repetition} for {'/'.join(map(str, r.key))}")
        seen.add(k)
    return out


# -- serialization ------------------------------------------------------------


def payload_to_dict(p: Payload) -> dict[str, Any]:
    if isinstance(p, InitTiming):
        return {"type": "init", "nprocs": p.nprocs, "min": p.min, "max": p.max, "avg": p.avg}
    if isinstance(p, MessageSizeSeries):
        return {"type": "latency", "points": [[pt.size, pt.latency] for pt in p.points]}
    if isinstance(p, NcclTable):
        rows = [
            [r.size, r.count, r.dtype, r.redop, r.oop_time, r.oop_algbw, r.oop_busbw,
             r.oop_wrong, r.ip_time, r.ip_algbw, r.ip_busbw, r.ip_wrong]
            for r in p.rows
        ]
        return {"type": "nccl", "rows": rows, "avg_busbw": p.avg_busbw}
    if isinstance(p, AppTiming):
        return {"type": "app", "app": p.app, "sim_seconds": p.sim_seconds,
                "workload": dict(sorted(p.workload.items()))}
    raise TypeError(f"not a payload: {p!r}")


def payload_from_dict(d: dict[str, Any]) -> Payload:
    kind = d["type"]
    if kind == "init":
        return InitTiming(d["nprocs"], d["min"], d["max"], d["avg"])
    if kind == "latency":
        return MessageSizeSeries(tuple(MessageSizePoint(s, lat) for s, lat in d["points"]))
    if kind == "nccl":
        return NcclTable(tuple(NcclRow(*row) for row in d["rows"]), d["avg_busbw"])
    if kind == "app":
        return AppTiming(d["app"], d["sim_seconds"], dict(d["workload"]))
    raise ValueError(f"unknown payload type {kind!r}")


def observation_to_dict(o: TransportObservation) -> dict[str, Any]:
    d = {"scope": o.scope.value, "mechanism": o.mechanism.value,
         "raw_line": o.raw_line, "source": o.source.value}
    if o.raw_token is not None:
        d["raw_token"] = o.raw_token
    return d


def observation_from_dict(d: dict[str, Any]) -> TransportObservation:
    return TransportObservation(
        Scope(d["scope"]), Mechanism(d["mechanism"]), d["raw_line"],
        LogSource(d["source"]), d.get("raw_token"),
    )


def record_to_dict(r: RunRecord) -> dict[str, Any]:
    return {
        "benchmark": r.benchmark.slug,
        "environment": r.environment.label,
        "image": r.environment.image_id,
        "system": r.system,
        "nodes": r.nodes,
        "tasks_per_node": r.tasks_per_node,
        "gpus_per_node_used": r.gpus_per_node_used,
        "repetition": r.repetition,
        "payload": payload_to_dict(r.payload),
        "transport_log": None if r.transport_log is None
        else [observation_to_dict(o) for o in r.transport_log],
        "source_path": r.source_path,
    }


def record_from_dict(d: dict[str, Any]) -> RunRecord:
    env = Environment.container(d["image"]) if d["environment"] == "container" else Environment.native()
    log = d.get("transport_log")
    return RunRecord(
        benchmark=Benchmark.from_slug(d["benchmark"]),
        environment=env,
        system=d["system"],
        nodes=d["nodes"],
        tasks_per_node=d["tasks_per_node"],
        gpus_per_node_used=d["gpus_per_node_used"],
        repetition=d["repetition"],
        payload=payload_from_dict(d["payload"]),
        source_path=d["source_path"],
        transport_log=None if log is None else tuple(observation_from_dict(o) for o in log),
    )
