"""JSON, Markdown and plot-CSV output for an evaluated campaign.

The JSON document is the single source; Markdown and CSV are projections of
it. Numeric leaves carry their formatting class: :class:`Ratio` values are
written with four decimals, :class:`Measure` values (durations, bandwidths)
with three. Percentages only ever appear in Markdown.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from .verdict import Finding, Severity, Status

SCHEMA_VERSION = 1


class Ratio(float):
    digits = 4


class Measure(float):
    digits = 3


def _fmt_number(x: float) -> str:
    digits = getattr(x, "digits", None)
    if not math.isfinite(x):
        return "null"
    if digits is None:
        return json.dumps(float(x))
    s = f"{x:.{digits}f}"
    if s.startswith("-") and float(s) == 0:
        s = s[1:]
    return s


def _canonical(obj: Any) -> str:
    if obj is None or isinstance(obj, bool):
        return json.dumps(obj)
    if isinstance(obj, int) and not isinstance(obj, bool):
        return str(obj)
    if isinstance(obj, float):
        return _fmt_number(obj)
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = sorted(obj.items())
        return "{" + ",".join(f"{json.dumps(str(k))}:{_canonical(v)}" for k, v in items) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canonical(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def finding_to_dict(f: Finding) -> dict[str, Any]:
    return {
        "id": f.id,
        "severity": f.severity.label,
        "subject": {"benchmark": f.subject.benchmark, "system": f.subject.system,
                    "environment": f.subject.environment or None,
                    "nodes": f.subject.nodes or None},
        "evidence": f.evidence,
        "hint": f.hint,
    }


@dataclass
class ComparisonBlock:
    system: str
    benchmark: str
    metrics: dict[str, Any] = field(default_factory=dict)
    findings: list[Finding] = field(default_factory=list)


@dataclass
class ReportDocument:
    plan_digest: str
    comparisons: list[ComparisonBlock]
    status: Status
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {self.schema_version}")
        ids = [f.id for c in self.comparisons for f in c.findings]
        if len(ids) != len(set(ids)):
            raise ValueError("finding ids must be unique within a report")

    @property
    def findings(self) -> list[Finding]:
        return [f for c in self.comparisons for f in c.findings]

    def to_dict(self) -> dict[str, Any]:
        counts = {s.label: 0 for s in Severity}
        for f in self.findings:
            counts[f.severity.label] += 1
        return {
            "schema_version": self.schema_version,
            "plan_digest": self.plan_digest,
            "status": self.status.value,
            "summary": counts,
            "comparisons": [
                {"system": c.system, "benchmark": c.benchmark, "metrics": c.metrics,
                 "findings": [finding_to_dict(f) for f in c.findings]}
                for c in self.comparisons
            ],
        }


def emit_json(doc: ReportDocument) -> str:
    return _canonical(doc.to_dict()) + "\n"


# -- markdown ------------------------------------------------------------------------

_DIRECTION = {"init": "Lower is better.", "latency": "Lower is better.", "strong": "Lower is better.",
              "weak": "Lower is better.", "nccl": "Higher is better."}


def _pct(x: Any) -> str:
    return "n/a" if x is None else f"{float(x) * 100:.1f}%"


def _num(x: Any) -> str:
    return "n/a" if x is None else _fmt_number(x)


def _ms(stats: dict[str, Any] | None, spread: str = "std") -> str:
    if not stats:
        return "n/a"
    if spread == "minmax":
        return f"{_num(stats['mean'])} [{_num(stats['min'])}, {_num(stats['max'])}]"
    return f"{_num(stats['mean'])} ± {_num(stats['std'])}"


def _table(header: list[str], rows: Iterable[list[str]]) -> list[str]:
    out = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    out += ["| " + " | ".join(r) + " |" for r in rows]
    return out


def _md_block(c: dict[str, Any]) -> list[str]:
    m = c["metrics"]
    kind = m.get("kind")
    out = [f"## {c['benchmark']} on {c['system']}", ""]
    if kind is None:
        out.append("No comparable results.")
    elif kind == "init":
        out.append(f"MPI initialization time (ms), min/max across runs. {_DIRECTION[kind]}")
        out.append("")
        out += _table(["nodes", "native", "container", "overhead"],
                      ([str(p["nodes"]), _ms(p["native"], "minmax"), _ms(p["container"], "minmax"),
                        _pct(p["relative_overhead"])] for p in m["points"]))
    elif kind == "latency":
        out.append(f"Latency (us) by message size. {_DIRECTION[kind]}")
        out.append("")
        out += _table(["regime", "sizes", "mean delta (us)", "max delta (us)", "mean rel. delta"],
                      ([name, str(r["count"]), _num(r["mean_abs_delta"]), _num(r["max_abs_delta"]),
                        _pct(r["mean_rel_delta"])] for name, r in m["regimes"].items()))
        out.append("")
        out += _table(["size (B)", "native", "container"],
                      ([str(p["size"]), _ms(p["native"]), _ms(p["container"])] for p in m["points"]))
    elif kind == "nccl":
        out.append(f"AllReduce bus bandwidth (GB/s). {_DIRECTION[kind]}")
        out.append("")
        for env in ("native", "container"):
            peak = m.get(env)
            if peak:
                out.append(f"- {env} peak bus bandwidth: {_ms(peak['peak_busbw'])} GB/s "
                           f"at {peak['peak_size']} B")
        out.append(f"- parity deviation: {_pct(m.get('parity_deviation'))}")
        red = m.get("reduction_vs_single_node")
        if red:
            out.append(f"- reduction vs. single node: native {_pct(red.get('native'))}, "
                       f"container {_pct(red.get('container'))}")
        out.append("")
        out += _table(["size (B)", "native busbw", "container busbw"],
                      ([str(p["size"]), _ms(p["native"]), _ms(p["container"])] for p in m["points"]))
    elif kind in ("strong", "weak"):
        label = "Strong" if kind == "strong" else "Weak"
        out.append(f"{label} scaling, simulation time (s) against nodes. {_DIRECTION[kind]}")
        out.append("")
        if kind == "strong":
            header = ["nodes", "native", "container", "efficiency native", "efficiency container",
                      "overhead"]
            rows = ([str(p["nodes"]), _ms(p["native"]), _ms(p["container"]),
                     _pct(p["efficiency"]["native"]), _pct(p["efficiency"]["container"]),
                     _pct(p["relative_overhead"])] for p in m["points"])
        else:
            header = ["nodes", "native", "container", "normalized native", "normalized container",
                      "overhead"]
            rows = ([str(p["nodes"]), _ms(p["native"]), _ms(p["container"]),
                     _num(p["normalized"]["native"]), _num(p["normalized"]["container"]),
                     _pct(p["relative_overhead"])] for p in m["points"])
        out += _table(header, rows)
        pat = m.get("pattern")
        if pat:
            value = pat["value"]
            shown = ("" if value is None else
                     f" ({_pct(value)})" if pat["kind"] != "constant_absolute" else f" ({_num(value)} s)")
            out += ["", f"Overhead pattern: {pat['kind'].replace('_', ' ')}{shown}"]
        flagged = {env: v for env, v in (m.get("outliers") or {}).items() if v}
        if flagged:
            out.append("Outliers: " + "; ".join(f"{env} at {v} nodes" for env, v in flagged.items()))
    out.append("")
    return out


def emit_markdown(doc: ReportDocument) -> str:
    d = doc.to_dict()
    out = ["# Native vs. container benchmark report", "",
           f"Overall status: **{d['status'].replace('_', ' ')}**", "",
           f"Plan digest: `{d['plan_digest']}`", ""]
    if not d["comparisons"]:
        out += ["No comparisons.", ""]
        return "\n".join(out)
    for c in d["comparisons"]:
        out += _md_block(c)
    out += ["## Findings", ""]
    findings = [f for c in d["comparisons"] for f in c["findings"]]
    order = {"fail": 0, "warn": 1, "info": 2}
    findings.sort(key=lambda f: order[f["severity"]])
    if not findings:
        out.append("None.")
    for f in findings:
        line = f"- **{f['severity'].upper()}** `{f['id']}`: {f['evidence']}"
        if f["hint"]:
            line += f" Hint: {f['hint']}"
        out.append(line)
    out.append("")
    return "\n".join(out)


# -- plot data -----------------------------------------------------------------------------

CSV_COLUMNS = ["x", "native_mean", "native_low", "native_high",
               "container_mean", "container_low", "container_high"]

_FIGURE = {"init": ("init", "nodes"), "latency": ("latency", "size"), "nccl": ("bandwidth", "size"),
           "strong": ("scaling", "nodes"), "weak": ("scaling", "nodes")}


def _band(stats: dict[str, Any] | None, minmax: bool) -> list[str]:
    if not stats:
        return ["", "", ""]
    mean = stats["mean"]
    if minmax:
        lo, hi = stats["min"], stats["max"]
    else:
        lo, hi = Measure(mean - stats["std"]), Measure(mean + stats["std"])
    return [_fmt_number(mean), _fmt_number(lo), _fmt_number(hi)]


def emit_plot_csv(doc: ReportDocument, out_dir: str | Path) -> list[Path]:
    """One CSV per figure family per comparison; init bands are min/max, others ±std."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for c in doc.to_dict()["comparisons"]:
        kind = c["metrics"].get("kind")
        if kind not in _FIGURE:
            continue
        family, xkey = _FIGURE[kind]
        path = out_dir / f"{c['system']}_{c['benchmark']}_{family}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for p in c["metrics"]["points"]:
                minmax = kind == "init"
                w.writerow([p[xkey], *_band(p["native"], minmax), *_band(p["container"], minmax)])
        written.append(path)
    return written
