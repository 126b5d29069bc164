"""Rules turning metrics and transport observations into graded findings."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Mapping

from .analytics import (
    OverheadPattern,
    PatternKind,
    PatternThresholds,
    Regime,
    RegimeSummary,
    Stats,
    parity_deviation,
)
from .model import Mechanism, Scope, SystemDescriptor, TransportObservation


class Severity(enum.IntEnum):
    INFO = 0
    WARN = 1
    FAIL = 2

    @property
    def label(self) -> str:
        return self.name.lower()


class Status(str, enum.Enum):
    PASS = "pass"
    PASS_WITH_WARNINGS = "pass_with_warnings"
    FAIL = "fail"


@dataclass(frozen=True, order=True)
class Subject:
    benchmark: str
    system: str
    environment: str = ""
    nodes: int = 0  # 0 when the finding spans node counts


@dataclass(frozen=True)
class Finding:
    id: str
    severity: Severity
    subject: Subject
    evidence: str
    hint: str = ""

    def __post_init__(self) -> None:
        if not self.evidence:
            raise ValueError(f"finding {self.id} needs evidence")

    def sort_key(self) -> tuple[Subject, str]:
        return (self.subject, self.id)


@dataclass(frozen=True)
class Band:
    warn: float
    fail: float

    def __post_init__(self) -> None:
        if not (self.warn > 0 and self.fail > 0):
            raise ValueError(f"thresholds must be > 0, got {self.warn}/{self.fail}")
        if not (self.warn < self.fail or math.isinf(self.warn)):
            raise ValueError(f"warn threshold {self.warn} must be below fail {self.fail}")

    def grade(self, value: float) -> Severity:
        if value > self.fail:
            return Severity.FAIL
        if value > self.warn:
            return Severity.WARN
        return Severity.INFO


_DEFAULT_LATENCY = {
    Regime.SMALL: Band(0.5, 2.0),    # microseconds
    Regime.MEDIUM: Band(1.0, 5.0),   # microseconds
    Regime.LARGE: Band(0.05, 0.15),  # relative delta
}


@dataclass(frozen=True)
class ExpectationProfile:
    """Every threshold the verdict rules use. ``None`` transport entries are
    derived from the system topology."""

    transports: Mapping[Scope, Mechanism] = field(default_factory=dict)
    latency: Mapping[Regime, Band] = field(default_factory=lambda: dict(_DEFAULT_LATENCY))
    bandwidth: Band = Band(0.02, 0.10)
    init_margin: float = 0.25
    max_relative_overhead: float = 0.20
    max_overhead_rise: float = 0.05
    pattern: PatternThresholds = PatternThresholds()
    outlier_k: float = 3.0

    def __post_init__(self) -> None:
        for name in ("init_margin", "max_relative_overhead", "max_overhead_rise", "outlier_k"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        missing = set(Regime) - set(self.latency)
        if missing:
            raise ValueError(f"latency thresholds missing for {sorted(r.value for r in missing)}")

    def expected_mechanisms(self, system: SystemDescriptor) -> dict[Scope, Mechanism]:
        p2p = Mechanism.NVLINK_P2P if system.has_nvlink else Mechanism.PCIE_P2P
        out = {
            Scope.INTRA_NODE_CPU: Mechanism.SHARED_MEMORY,
            Scope.INTER_NODE_CPU: Mechanism.INFINIBAND_VERBS,
            Scope.GPU_PEER_TO_PEER: p2p,
            Scope.GPU_NETWORK: Mechanism.IB_NET_GDRDMA,
        }
        out.update(self.transports)
        return out

    @classmethod
    def permissive(cls) -> ExpectationProfile:
        inf = math.inf
        return cls(
            latency={r: Band(inf, inf) for r in Regime},
            bandwidth=Band(inf, inf),
            init_margin=inf,
            max_relative_overhead=inf,
            max_overhead_rise=inf,
        )

    def with_overrides(self, overrides: Mapping[str, Any] | None) -> ExpectationProfile:
        """Apply a ``verify`` section; unknown keys raise ``ValueError``."""
        if not overrides:
            return self
        ov = dict(overrides)
        changes: dict[str, Any] = {}
        if "transports" in ov:
            t = dict(self.transports)
            for scope, mech in (ov.pop("transports") or {}).items():
                t[Scope(scope)] = Mechanism(mech)
            changes["transports"] = t
        if "latency" in ov:
            lat = dict(self.latency)
            for regime, band in (ov.pop("latency") or {}).items():
                lat[Regime(regime)] = _band(band, lat[Regime(regime)], f"latency.{regime}")
            changes["latency"] = lat
        if "bandwidth" in ov:
            changes["bandwidth"] = _band(ov.pop("bandwidth"), self.bandwidth, "bandwidth")
        if "pattern" in ov:
            pat = dict(ov.pop("pattern") or {})
            bad = set(pat) - {"noise_floor", "cv_cutoff", "growth_rise"}
            if bad:
                raise ValueError(f"verify.pattern: unknown keys {sorted(bad)}")
            changes["pattern"] = replace(self.pattern, **{k: float(v) for k, v in pat.items()})
        for key in ("init_margin", "max_relative_overhead", "max_overhead_rise", "outlier_k"):
            if key in ov:
                changes[key] = float(ov.pop(key))
        if ov:
            raise ValueError(f"verify: unknown keys {sorted(ov)}")
        return replace(self, **changes)


def _band(raw: Any, base: Band, where: str) -> Band:
    if not isinstance(raw, Mapping):
        raise ValueError(f"{where}: expected a mapping with warn/fail")
    bad = set(raw) - {"warn", "fail"}
    if bad:
        raise ValueError(f"{where}: unknown keys {sorted(bad)}")
    return Band(float(raw.get("warn", base.warn)), float(raw.get("fail", base.fail)))


# -- rules ----------------------------------------------------------------------------


_HINTS = {
    Mechanism.TCP: "UCX/NCCL fell back to TCP; check that /dev/infiniband is visible inside "
                   "the container and that UCX_TLS / NCCL_IB_HCA are not restricting transports",
    Mechanism.PCIE_P2P: "GPU peers talk over PCIe although NVLink is declared; check "
                        "NCCL_P2P_LEVEL and that all GPUs are visible to each rank",
    Mechanism.IB_NET_PLAIN: "GPUDirect RDMA is not used; check the nvidia-peermem module and "
                            "that the container is launched with --nv",
    Mechanism.SHARED_MEMORY: "traffic is staged through host memory instead of a direct path",
    Mechanism.UNKNOWN: "no transport rule matched this line; extend the ruleset if it is benign",
}


def verify_transports(
    observations: Iterable[TransportObservation],
    profile: ExpectationProfile,
    system: SystemDescriptor,
    subject: Subject | None = None,
) -> list[Finding]:
    """Exactly one finding per observation."""
    subject = subject or Subject("", system.name)
    expected = profile.expected_mechanisms(system)
    out = []
    for i, obs in enumerate(observations):
        want = expected[obs.scope]
        got = obs.mechanism
        if got is want:
            sev, what = Severity.INFO, "expected transport"
        elif got is Mechanism.SELF:
            sev, what = Severity.INFO, "loopback endpoint"
        elif got is Mechanism.UNKNOWN:
            sev, what = Severity.WARN, f"unrecognized transport {obs.raw_token!r}"
        elif got is Mechanism.TCP and obs.scope in (Scope.INTER_NODE_CPU, Scope.GPU_NETWORK):
            sev, what = Severity.FAIL, "suboptimal transport pathway"
        else:
            sev, what = Severity.WARN, "unexpected transport"
        evidence = f"{obs.scope.value}: {what} {got.value} (expected {want.value}); log: {obs.raw_line}"
        out.append(Finding(f"transport-{i:04d}", sev, subject, evidence,
                           "" if sev is Severity.INFO else _HINTS.get(got, "")))
    return out


def verify_latency(
    summary: RegimeSummary, profile: ExpectationProfile, subject: Subject | None = None
) -> list[Finding]:
    subject = subject or Subject("osu_latency", "")
    out = []
    for regime in Regime:
        d = summary.get(regime)
        if d is None:
            continue
        band = profile.latency[regime]
        if regime is Regime.LARGE:
            sev = band.grade(d.mean_rel_delta)
            evidence = (f"{regime.value} messages ({d.count} sizes): mean relative delta "
                        f"{d.mean_rel_delta:.4f} (warn {band.warn}, fail {band.fail})")
        else:
            sev = band.grade(d.mean_abs_delta)
            evidence = (f"{regime.value} messages ({d.count} sizes): mean delta "
                        f"{d.mean_abs_delta:.3f} us, max {d.max_abs_delta:.3f} us "
                        f"(warn {band.warn} us, fail {band.fail} us)")
        hint = "" if sev is Severity.INFO else "compare transports chosen in both environments"
        out.append(Finding(f"latency-{regime.value}", sev, subject, evidence, hint))
    return out


def verify_bandwidth(
    native_peak: float,
    container_peak: float,
    profile: ExpectationProfile,
    subject: Subject | None = None,
) -> list[Finding]:
    subject = subject or Subject("nccl", "")
    dev = parity_deviation(native_peak, container_peak)
    sev = profile.bandwidth.grade(dev)
    evidence = (f"peak bus bandwidth native {native_peak:.3f} GB/s, container "
                f"{container_peak:.3f} GB/s, deviation {dev:.4f}")
    hint = "" if sev is Severity.INFO else "check GPUDirect RDMA and NIC affinity inside the container"
    return [Finding("bandwidth-parity", sev, subject, evidence, hint)]


def verify_init(
    native: Mapping[int, Stats],
    container: Mapping[int, Stats],
    profile: ExpectationProfile,
    subject: Subject | None = None,
) -> list[Finding]:
    """Directional: only a slower container can warn.

    A Fail is added when the container is beyond the margin somewhere and its
    relative excess grows strictly with node count.
    """
    subject = subject or Subject("osu_init", "")
    nodes = sorted(set(native) & set(container))
    out = []
    excess = []
    for n in nodes:
        nat, con = native[n].mean, container[n].mean
        e = (con - nat) / nat if nat > 0 else math.inf
        excess.append(e)
        sub = replace(subject, nodes=n)
        if e > profile.init_margin:
            sev, what = Severity.WARN, "container init slower than native beyond margin"
        elif e < 0:
            sev, what = Severity.INFO, "container init faster than native"
        else:
            sev, what = Severity.INFO, "container init within margin"
        out.append(Finding(
            "init-gap", sev, sub,
            f"{what}: native {nat:.3f} ms, container {con:.3f} ms, excess {e:.4f} "
            f"(margin {profile.init_margin})",
            "" if sev is Severity.INFO else "inspect PMIx bootstrap and UCX device discovery",
        ))
    beyond = any(e > profile.init_margin for e in excess)
    growing = len(excess) >= 2 and all(b > a for a, b in zip(excess, excess[1:]))
    if beyond and growing:
        trail = ", ".join(f"{n}n: {e:.4f}" for n, e in zip(nodes, excess))
        out.append(Finding("init-trend", Severity.FAIL, subject,
                           f"container init excess grows with node count ({trail})",
                           "the gap widens with scale; check PMIx wire-up inside the container"))
    return out


def verify_scaling(
    pattern: OverheadPattern, profile: ExpectationProfile, subject: Subject | None = None
) -> list[Finding]:
    subject = subject or Subject("scaling", "")
    trail = ", ".join(f"{n}n: {r:+.4f}" for n, r in zip(pattern.nodes, pattern.relative))
    if pattern.kind is PatternKind.GROWING_WITH_SCALE:
        sev = Severity.FAIL if pattern.rise > profile.max_overhead_rise else Severity.INFO
        return [Finding("scaling-pattern", sev, subject,
                        f"container overhead grows with node count, rise {pattern.rise:.4f} ({trail})",
                        "overhead that grows with scale points at the communication path")]
    if pattern.kind is PatternKind.CONSTANT_RELATIVE:
        r = pattern.value
        sev = Severity.WARN if r > profile.max_relative_overhead else Severity.INFO
        return [Finding("scaling-pattern", sev, subject,
                        f"constant relative overhead {r * 100:.1f}% ({trail})",
                        "" if sev is Severity.INFO else
                        "compute-bound slowdown; compare user-space CUDA and compiler versions")]
    if pattern.kind is PatternKind.CONSTANT_ABSOLUTE:
        return [Finding("scaling-pattern", Severity.INFO, subject,
                        f"constant absolute overhead {pattern.value:.3f} s ({trail})")]
    return [Finding("scaling-pattern", Severity.INFO, subject,
                    f"no systematic container overhead ({trail})")]


def compose_verdict(findings: Iterable[Finding]) -> Status:
    worst = max((f.severity for f in findings), default=Severity.INFO)
    return {Severity.INFO: Status.PASS, Severity.WARN: Status.PASS_WITH_WARNINGS,
            Severity.FAIL: Status.FAIL}[worst]


def sort_findings(findings: Iterable[Finding]) -> list[Finding]:
    return sorted(findings, key=Finding.sort_key)
