"""Parsers for OSU, NCCL-tests and application-trailer output, plus debug logs.

Grammars are strict: comment (``#``) and blank lines are ignored, numbers use
a decimal point only, and thousands separators are rejected.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import yaml

from .model import (
    AppTiming,
    Family,
    InitTiming,
    Interconnect,
    LogSource,
    Mechanism,
    MessageSizePoint,
    MessageSizeSeries,
    NcclRow,
    NcclTable,
    Scope,
    SystemDescriptor,
    TransportObservation,
)


class ParseError(ValueError):
    """Base class for all benchmark-output grammar errors."""


class MalformedRow(ParseError):
    def __init__(self, line_no: int, line: str = "", reason: str = ""):
        self.line_no = line_no
        msg = f"malformed row at line {line_no}"
        if reason:
            msg += f" ({reason})"
        if line:
            msg += f": {line.strip()!r}"
        super().__init__(msg)


class EmptyOutput(ParseError):
    pass


class SizeOrdering(ParseError):
    pass


class MissingField(ParseError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"missing field {name!r}")


class UnitMismatch(ParseError):
    pass


class OrderingViolation(ParseError):
    pass


class MissingAvgBandwidth(ParseError):
    pass


class MissingSimTime(ParseError):
    pass


class DuplicateSimTime(ParseError):
    pass


_INT = re.compile(r"^\d+$")
_FLOAT = re.compile(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")


def _int(tok: str) -> int | None:
    return int(tok) if _INT.match(tok) else None


def _float(tok: str) -> float | None:
    return float(tok) if _FLOAT.match(tok) else None


def _data_lines(text: str) -> Iterable[tuple[int, str]]:
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s and not s.startswith("#"):
            yield no, s


def parse_osu_latency(text: str) -> MessageSizeSeries:
    points: list[MessageSizePoint] = []
    for no, line in _data_lines(text):
        fields = line.split()
        if len(fields) != 2:
            raise MalformedRow(no, line, f"expected 2 fields, got {len(fields)}")
        size, lat = _int(fields[0]), _float(fields[1])
        if size is None or lat is None:
            raise MalformedRow(no, line, "non-numeric field")
        if points and size <= points[-1].size:
            raise SizeOrdering(f"line {no}: size {size} does not follow {points[-1].size}")
        points.append(MessageSizePoint(size, lat))
    if not points:
        raise EmptyOutput("no latency rows")
    return MessageSizeSeries(tuple(points))


_INIT_FIELD = r"\b{name}:\s*([^\s,]+)(?:[ \t]+([^\s,]+))?\s*(?:,|$)"


def parse_osu_init(text: str) -> InitTiming:
    line = next((s for _, s in _data_lines(text) if "nprocs:" in s), None)
    if line is None:
        raise MissingField("nprocs")

    def grab(name: str, unit: str | None) -> str:
        m = re.search(_INIT_FIELD.format(name=name), line)
        if m is None:
            raise MissingField(name)
        value, tok = m.group(1), m.group(2)
        if tok != unit:
            raise UnitMismatch(f"{name}: expected unit {unit!r}, got {tok!r}")
        return value

    raw_n = grab("nprocs", None)
    nprocs = _int(raw_n)
    if nprocs is None:
        raise MalformedRow(1, line, f"nprocs {raw_n!r} is not an integer")
    vals = {}
    for name in ("min", "max", "avg"):
        raw = grab(name, "ms")
        v = _float(raw)
        if v is None:
            raise MalformedRow(1, line, f"{name} {raw!r} is not a number")
        vals[name] = v
    if min(vals.values()) < 0:
        raise OrderingViolation("init timings must be non-negative")
    if not vals["min"] <= vals["avg"] <= vals["max"]:
        raise OrderingViolation(
            f"expected min <= avg <= max, got {vals['min']}, {vals['avg']}, {vals['max']}"
        )
    return InitTiming(nprocs, vals["min"], vals["max"], vals["avg"])


_AVG_BW = re.compile(r"^#\s*Avg bus bandwidth\s*:\s*(\S+)")


def parse_nccl_allreduce(text: str) -> NcclTable:
    rows: list[NcclRow] = []
    avg: float | None = None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            m = _AVG_BW.match(s)
            if m:
                avg = _float(m.group(1))
                if avg is None:
                    raise MalformedRow(no, s, "average bus bandwidth is not a number")
            continue
        f = s.split()
        if len(f) != 13:
            raise MalformedRow(no, s, f"expected 13 fields, got {len(f)}")
        ints = [_int(f[i]) for i in (0, 1, 8, 12)]
        floats = [_float(f[i]) for i in (5, 6, 7, 9, 10, 11)]
        if None in ints or None in floats or _ROOT.match(f[4]) is None:
            raise MalformedRow(no, s, "non-numeric field")
        size, count, oop_wrong, ip_wrong = ints
        oop_t, oop_alg, oop_bus, ip_t, ip_alg, ip_bus = floats
        if rows and size <= rows[-1].size:
            raise SizeOrdering(f"line {no}: size {size} does not follow {rows[-1].size}")
        rows.append(NcclRow(size, count, f[2], f[3], oop_t, oop_alg, oop_bus, oop_wrong,
                            ip_t, ip_alg, ip_bus, ip_wrong))
    if not rows:
        raise EmptyOutput("no NCCL data rows")
    if avg is None:
        raise MissingAvgBandwidth("no '# Avg bus bandwidth' line")
    return NcclTable(tuple(rows), avg)


_ROOT = re.compile(r"^-?\d+$")


def parse_app_timing(text: str, app: str) -> AppTiming:
    """Read the ``SIMTIME``/``PARAM`` trailer the job scripts append.

    Anything else in the text (simulator chatter) is ignored.
    """
    sim: float | None = None
    workload: dict[str, float] = {}
    for no, line in _data_lines(text):
        f = line.split()
        if f[0] == "SIMTIME":
            if len(f) != 2 or _float(f[1]) is None:
                raise MalformedRow(no, line, "expected 'SIMTIME <seconds>'")
            if sim is not None:
                raise DuplicateSimTime(f"second SIMTIME line at line {no}")
            sim = float(f[1])
        elif f[0] == "PARAM":
            if len(f) != 3 or _float(f[2]) is None:
                raise MalformedRow(no, line, "expected 'PARAM <name> <value>'")
            if f[1] in workload:
                raise MalformedRow(no, line, f"parameter {f[1]!r} repeated")
            workload[f[1]] = int(f[2]) if _INT.match(f[2]) else float(f[2])
    if sim is None:
        raise MissingSimTime("no SIMTIME line")
    return AppTiming(app, sim, workload)


# -- transport logs -----------------------------------------------------------


@dataclass(frozen=True)
class TransportRule:
    source: LogSource
    pattern: str
    scope: Scope
    mechanism: Mechanism
    regex: bool = False

    def __post_init__(self) -> None:
        if not self.pattern:
            raise ValueError("rule pattern must be non-empty")
        if self.mechanism is Mechanism.UNKNOWN:
            raise ValueError("rules must name a concrete mechanism")
        if self.regex:
            re.compile(self.pattern)

    def matches(self, line: str) -> bool:
        if self.regex:
            return re.search(self.pattern, line) is not None
        return self.pattern in line


@dataclass(frozen=True)
class TransportRuleset:
    """Ordered rules (first match wins) plus the sentinels marking transport lines."""

    rules: tuple[TransportRule, ...]
    sentinels: tuple[str, ...] = ("via", "using")
    _sentinel_re: re.Pattern = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        words = "|".join(re.escape(s) for s in self.sentinels) or r"(?!)"
        object.__setattr__(self, "_sentinel_re", re.compile(rf"\b(?:{words})\b\s*(\S*)"))

    def extended(self, rules: Iterable[TransportRule]) -> TransportRuleset:
        """Operator rules are tried before the existing ones."""
        return TransportRuleset(tuple(rules) + self.rules, self.sentinels)


def _line_source(line: str) -> LogSource | None:
    if "NCCL" in line:
        return LogSource.NCCL
    if "UCX" in line or "ucp_" in line or "uct_" in line:
        return LogSource.UCX
    return None


def _guess_scope(source: LogSource, line: str) -> Scope:
    # Best effort for lines no rule claimed; the verdict warns on them regardless.
    if source is LogSource.NCCL:
        return Scope.GPU_NETWORK if "NET/" in line else Scope.GPU_PEER_TO_PEER
    return Scope.INTER_NODE_CPU


def parse_transport_log(text: str, ruleset: TransportRuleset) -> list[TransportObservation]:
    out: list[TransportObservation] = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        source = _line_source(line)
        if source is None:
            continue
        rule = next((r for r in ruleset.rules if r.source is source and r.matches(line)), None)
        if rule is not None:
            out.append(TransportObservation(rule.scope, rule.mechanism, line, source))
            continue
        m = ruleset._sentinel_re.search(line)
        if m:
            token = m.group(1) or line
            out.append(TransportObservation(_guess_scope(source, line), Mechanism.UNKNOWN,
                                            line, source, token))
    return out


def default_ruleset(system: SystemDescriptor | None = None) -> TransportRuleset:
    """Rules for UCX info-level and NCCL INFO output.

    NCCL prints ``via P2P/...`` for any direct GPU peer path; whether that is
    NVLink or PCIe depends on the node, so ``system`` decides.
    """
    p2p = Mechanism.NVLINK_P2P
    if system is not None and system.gpu_interconnect is Interconnect.PCIE:
        p2p = Mechanism.PCIE_P2P
    U, N = LogSource.UCX, LogSource.NCCL
    rules = [
        TransportRule(N, r"via NET/IB\S*/GDRDMA", Scope.GPU_NETWORK, Mechanism.IB_NET_GDRDMA, True),
        TransportRule(N, r"via NET/IB", Scope.GPU_NETWORK, Mechanism.IB_NET_PLAIN, True),
        TransportRule(N, r"via NET/Socket", Scope.GPU_NETWORK, Mechanism.TCP, True),
        TransportRule(N, r"\btype NVL/", Scope.GPU_PEER_TO_PEER, Mechanism.NVLINK_P2P, True),
        TransportRule(N, r"\btype (?:PIX|PXB|PHB)/", Scope.GPU_PEER_TO_PEER, Mechanism.PCIE_P2P, True),
        TransportRule(N, r"via P2P", Scope.GPU_PEER_TO_PEER, p2p, True),
        TransportRule(N, r"via SHM", Scope.GPU_PEER_TO_PEER, Mechanism.SHARED_MEMORY, True),
        TransportRule(U, r"\btcp/", Scope.INTER_NODE_CPU, Mechanism.TCP, True),
        TransportRule(U, r"\b(?:rc|dc|ud)(?:_verbs|_mlx5)?/", Scope.INTER_NODE_CPU,
                      Mechanism.INFINIBAND_VERBS, True),
        TransportRule(U, r"\b(?:posix|sysv|xpmem|cma|knem)/", Scope.INTRA_NODE_CPU,
                      Mechanism.SHARED_MEMORY, True),
        TransportRule(U, r"\bself/", Scope.INTRA_NODE_CPU, Mechanism.SELF, True),
    ]
    return TransportRuleset(tuple(rules))


def load_ruleset(path: str | Path) -> TransportRuleset:
    """Load a ruleset file.

    The file is YAML (or JSON) of the form::

        sentinels: [via, using]
        rules:
          - {source: nccl, pattern: "via NET/IB", regex: true,
             scope: gpu_network, mechanism: ib_net_plain}
    """
    doc = yaml.safe_load(Path(path).read_text())
    if isinstance(doc, list):
        doc = {"rules": doc}
    if not isinstance(doc, dict) or not isinstance(doc.get("rules"), list):
        raise ValueError(f"{path}: expected a 'rules' list")
    unknown = set(doc) - {"rules", "sentinels"}
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    rules = []
    for i, r in enumerate(doc["rules"]):
        extra = set(r) - {"source", "pattern", "regex", "scope", "mechanism"}
        if extra:
            raise ValueError(f"{path}: rule {i} has unknown keys {sorted(extra)}")
        try:
            rules.append(TransportRule(LogSource(r["source"]), str(r["pattern"]), Scope(r["scope"]),
                                       Mechanism(r["mechanism"]), bool(r.get("regex", False))))
        except (KeyError, ValueError, re.error) as exc:
            raise ValueError(f"{path}: rule {i}: {exc}") from None
    sentinels = tuple(doc.get("sentinels", ("via", "using")))
    return TransportRuleset(tuple(rules), sentinels)


# -- format sniffing ----------------------------------------------------------


class TextFormat(str, enum.Enum):
    """What a blob of output looks like. OSU latency topology is not visible in text."""

    OSU_INIT = "osu_init"
    OSU_LATENCY = "osu_latency"
    NCCL_ALLREDUCE = "nccl_allreduce"
    APP_TIMING = "app_timing"
    UNRECOGNIZED = "unrecognized"

    def accepts(self, family: Family) -> bool:
        return {
            TextFormat.OSU_INIT: family is Family.OSU_INIT,
            TextFormat.OSU_LATENCY: family.is_latency,
            TextFormat.NCCL_ALLREDUCE: family.is_nccl,
            TextFormat.APP_TIMING: family.is_app,
        }.get(self, False)


_NCCL_HEADER = re.compile(r"^#.*\bsize\b.*\bcount\b.*\btype\b.*\bredop\b.*\bbusbw\b", re.M)


def detect_format(text: str) -> TextFormat:
    if "OSU MPI Latency" in text:
        return TextFormat.OSU_LATENCY
    if "OSU MPI Init" in text or re.search(r"^\s*nprocs:", text, re.M):
        return TextFormat.OSU_INIT
    if _NCCL_HEADER.search(text):
        return TextFormat.NCCL_ALLREDUCE
    if re.search(r"^\s*SIMTIME\s", text, re.M):
        return TextFormat.APP_TIMING
    return TextFormat.UNRECOGNIZED
