"""Group ingested runs into native/container comparisons, compute metrics and
findings, and assemble the report document."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, replace
from pathlib import PurePosixPath
from typing import Any, Iterable

from . import analytics as an
from .harness import Manifest, Plan
from .model import (
    AppTiming,
    Benchmark,
    Family,
    InitTiming,
    MessageSizePoint,
    MessageSizeSeries,
    NcclTable,
    RunRecord,
)
from .report import ComparisonBlock, Measure, Ratio, ReportDocument
from .verdict import (
    ExpectationProfile,
    Finding,
    Severity,
    Subject,
    compose_verdict,
    sort_findings,
    verify_bandwidth,
    verify_init,
    verify_latency,
    verify_scaling,
    verify_transports,
)

ENVS = ("native", "container")


def _stats(s: an.Stats | None) -> dict[str, Any] | None:
    if s is None:
        return None
    return {"mean": Measure(s.mean), "std": Measure(s.std), "min": Measure(s.min),
            "max": Measure(s.max), "n": s.n}


def _ratio(x: float | None) -> Ratio | None:
    return None if x is None else Ratio(x)


def _group(records: Iterable[RunRecord]) -> dict[tuple[str, str], dict[str, dict[int, list[RunRecord]]]]:
    """(system, benchmark slug) -> env label -> nodes -> runs ordered by repetition."""
    out: dict = defaultdict(lambda: {e: defaultdict(list) for e in ENVS})
    for r in sorted(records, key=lambda r: (*r.key, r.repetition)):
        out[(r.system, r.benchmark.slug)][r.environment.label][r.nodes].append(r)
    return out


@dataclass
class Evaluation:
    blocks: list[ComparisonBlock]
    plan_digest: str

    @property
    def findings(self) -> list[Finding]:
        return [f for b in self.blocks for f in b.findings]

    def document(self) -> ReportDocument:
        return ReportDocument(self.plan_digest, self.blocks, compose_verdict(self.findings))


# -- per-family metrics -------------------------------------------------------------------


def _init_metrics(runs: dict[str, dict[int, list[RunRecord]]], profile, subj):
    per_env: dict[str, dict[int, an.Stats]] = {e: {} for e in ENVS}
    for env in ENVS:
        for n, recs in runs[env].items():
            ts = [r.payload for r in recs if isinstance(r.payload, InitTiming)]
            if not ts:
                continue
            agg = an.aggregate([t.avg for t in ts], an.Spread.MIN_MAX)
            # error bars span the extreme single-process times seen in any run
            per_env[env][n] = an.Stats(agg.mean, agg.std, min(min(t.min for t in ts), agg.min),
                                       max(max(t.max for t in ts), agg.max), agg.n)
    points = []
    for n in sorted(set(per_env["native"]) | set(per_env["container"])):
        nat, con = per_env["native"].get(n), per_env["container"].get(n)
        rel = an.relative_overhead(con.mean, nat.mean) if nat and con and nat.mean > 0 else None
        points.append({"nodes": n, "native": _stats(nat), "container": _stats(con),
                       "relative_overhead": _ratio(rel)})
    findings = []
    if set(per_env["native"]) & set(per_env["container"]):
        findings = verify_init(per_env["native"], per_env["container"], profile, subj)
    return {"kind": "init", "unit": "ms", "points": points}, findings


def _latency_metrics(runs, profile, subj):
    per_env: dict[str, dict[int, an.Stats]] = {e: {} for e in ENVS}
    for env in ENVS:
        samples: dict[int, list[float]] = defaultdict(list)
        for recs in runs[env].values():
            for r in recs:
                if isinstance(r.payload, MessageSizeSeries):
                    for p in r.payload.points:
                        samples[p.size].append(p.latency)
        per_env[env] = {size: an.aggregate(v) for size, v in sorted(samples.items())}
    sizes = sorted(set(per_env["native"]) | set(per_env["container"]))
    points = [{"size": s, "native": _stats(per_env["native"].get(s)),
               "container": _stats(per_env["container"].get(s))} for s in sizes]
    metrics: dict[str, Any] = {"kind": "latency", "unit": "us", "points": points, "regimes": {}}
    findings: list[Finding] = []

    def series(env: str) -> MessageSizeSeries:
        return MessageSizeSeries(tuple(MessageSizePoint(s, st.mean) for s, st in per_env[env].items()))

    if per_env["native"] and per_env["container"]:
        try:
            summary = an.regime_summary(series("native"), series("container"))
        except an.NoCommonSizes:
            summary = None
        if summary is not None:
            metrics["regimes"] = {
                r.value: {"count": d.count, "mean_abs_delta": Measure(d.mean_abs_delta),
                          "max_abs_delta": Measure(d.max_abs_delta),
                          "mean_rel_delta": Ratio(d.mean_rel_delta)}
                for r, d in summary.regimes.items()
            }
            findings = verify_latency(summary, profile, subj)
    return metrics, findings


def _nccl_env(recs_by_nodes: dict[int, list[RunRecord]]):
    tables = [r.payload for recs in recs_by_nodes.values() for r in recs
              if isinstance(r.payload, NcclTable) and r.payload.rows]
    if not tables:
        return None, {}
    by_size: dict[int, list[float]] = defaultdict(list)
    for t in tables:
        for row in t.rows:
            by_size[row.size].append(row.oop_busbw)
    per_size = {s: an.aggregate(v) for s, v in sorted(by_size.items())}
    peaks = an.aggregate([an.peak_bus_bandwidth(t)[1] for t in tables])
    peak_size = max(per_size, key=lambda s: (per_size[s].mean, s))
    summary = {"peak_size": peak_size, "peak_busbw": _stats(peaks),
               "avg_busbw": _stats(an.aggregate([t.avg_busbw for t in tables]))}
    return summary, per_size


def _nccl_metrics(runs, profile, subj):
    summaries, per_size = {}, {}
    for env in ENVS:
        summaries[env], per_size[env] = _nccl_env(runs[env])
    sizes = sorted(set(per_size["native"]) | set(per_size["container"]))
    metrics: dict[str, Any] = {
        "kind": "nccl", "unit": "GB/s", "side": an.Side.OUT_OF_PLACE.value,
        "native": summaries["native"], "container": summaries["container"],
        "parity_deviation": None,
        "points": [{"size": s, "native": _stats(per_size["native"].get(s)),
                    "container": _stats(per_size["container"].get(s))} for s in sizes],
    }
    findings: list[Finding] = []
    nat, con = summaries["native"], summaries["container"]
    if nat and con and nat["peak_busbw"]["mean"] > 0:
        metrics["parity_deviation"] = Ratio(an.parity_deviation(nat["peak_busbw"]["mean"],
                                                                con["peak_busbw"]["mean"]))
        findings = verify_bandwidth(nat["peak_busbw"]["mean"], con["peak_busbw"]["mean"], profile, subj)
    return metrics, findings


def _series(runs_env: dict[int, list[RunRecord]]) -> an.ScalingSeries | None:
    means = {}
    for n, recs in sorted(runs_env.items()):
        ts = [r.payload.sim_seconds for r in recs if isinstance(r.payload, AppTiming)]
        if ts:
            means[n] = an.aggregate(ts)
    if not means:
        return None
    pts = tuple(sorted(means.items()))
    return an.ScalingSeries(pts, pts[0][0])


def _scaling_metrics(kind: Family, runs, profile: ExpectationProfile, subj):
    series = {env: _series(runs[env]) for env in ENVS}
    nat, con = series["native"], series["container"]
    nodes = sorted(set(nat.nodes if nat else []) | set(con.nodes if con else []))
    points = []
    for n in nodes:
        st = {env: (dict(s.points).get(n) if s else None) for env, s in series.items()}
        p: dict[str, Any] = {"nodes": n, "native": _stats(st["native"]),
                             "container": _stats(st["container"])}
        if kind is Family.APP_STRONG:
            eff, spd, sup = {}, {}, {}
            for env, s in series.items():
                if s is None or st[env] is None:
                    eff[env] = spd[env] = sup[env] = None
                    continue
                base = s.stats_at(s.baseline_nodes).mean
                eff[env] = Ratio(an.strong_efficiency(base, st[env].mean, n, s.baseline_nodes))
                sp, superlinear = an.speedup(base, st[env].mean, n, s.baseline_nodes)
                spd[env], sup[env] = Ratio(sp), superlinear
            p.update(efficiency=eff, speedup=spd, superlinear=sup)
        else:
            norm = {}
            base = nat.stats_at(nat.baseline_nodes) if nat else None
            for env, s in series.items():
                norm[env] = (Ratio(st[env].mean / base.mean)
                             if base is not None and st[env] is not None and base.mean > 0 else None)
            p["normalized"] = norm
        both = st["native"] is not None and st["container"] is not None
        p["relative_overhead"] = _ratio(an.relative_overhead(st["container"].mean, st["native"].mean)) \
            if both else None
        p["absolute_overhead"] = Measure(an.absolute_overhead(st["container"].mean, st["native"].mean)) \
            if both else None
        points.append(p)

    metrics: dict[str, Any] = {"kind": kind.value, "unit": "s",
                               "baseline_nodes": {env: (s.baseline_nodes if s else None)
                                                  for env, s in series.items()},
                               "points": points, "pattern": None,
                               "outliers": {env: [] for env in ENVS}}
    for env, s in series.items():
        if s is not None and len(s.points) >= 3:
            metrics["outliers"][env] = an.detect_outliers(s, profile.outlier_k)
    findings: list[Finding] = []
    if nat and con:
        try:
            pattern = an.classify_overhead_pattern(nat, con, profile.pattern)
        except an.InsufficientPoints:
            pattern = None
        if pattern is not None:
            value = pattern.value
            if pattern.kind is an.PatternKind.CONSTANT_ABSOLUTE:
                value = Measure(value)
            elif value is not None:
                value = Ratio(value)
            metrics["pattern"] = {"kind": pattern.kind.value, "value": value,
                                  "nodes": list(pattern.nodes),
                                  "relative": [Ratio(r) for r in pattern.relative],
                                  "absolute": [Measure(a) for a in pattern.absolute]}
            findings = verify_scaling(pattern, profile, subj)
    return metrics, findings


# -- evaluation ---------------------------------------------------------------------------------


def _finalize_ids(findings: list[Finding], extra: str = "") -> list[Finding]:
    out = []
    for f in findings:
        s = f.subject
        prefix = f"{s.system}/{s.benchmark}/{s.environment or 'both'}/{s.nodes or 'all'}n"
        out.append(replace(f, id=f"{prefix}/{f.id}{extra}"))
    return out


def evaluate(manifest: Manifest, profile: ExpectationProfile | None = None,
             plan: Plan | None = None) -> Evaluation:
    plan = plan or manifest.load_plan()
    profile = profile or plan.profile()
    systems = plan.descriptors
    grouped = _group(manifest.records)
    blocks: dict[tuple[str, str], ComparisonBlock] = {}

    def block(system: str, bench: str) -> ComparisonBlock:
        if (system, bench) not in blocks:
            blocks[(system, bench)] = ComparisonBlock(system, bench)
        return blocks[(system, bench)]

    for (system, slug), runs in grouped.items():
        bench = Benchmark.from_slug(slug)
        subj = Subject(slug, system)
        fam = bench.family
        if fam is Family.OSU_INIT:
            metrics, findings = _init_metrics(runs, profile, subj)
        elif fam.is_latency:
            metrics, findings = _latency_metrics(runs, profile, subj)
        elif fam.is_nccl:
            metrics, findings = _nccl_metrics(runs, profile, subj)
        else:
            metrics, findings = _scaling_metrics(fam, runs, profile, subj)
        b = block(system, slug)
        b.metrics = metrics
        b.findings += _finalize_ids(findings)

        for env in ENVS:
            for n, recs in runs[env].items():
                for r in recs:
                    if not r.transport_log:
                        continue
                    fs = verify_transports(r.transport_log, profile, systems[system],
                                           Subject(slug, system, env, n))
                    b.findings += _finalize_ids(fs, f"-r{r.repetition}")

    # bandwidth drop from one node to two, per system and environment
    for (system, slug), b in blocks.items():
        if slug != Family.NCCL_ALLREDUCE_MULTI.value:
            continue
        single = blocks.get((system, Family.NCCL_ALLREDUCE_SINGLE.value))
        if single is None:
            continue
        red = {}
        for env in ENVS:
            intra, inter = single.metrics.get(env), b.metrics.get(env)
            red[env] = (Ratio(an.bandwidth_reduction(intra["peak_busbw"]["mean"],
                                                     inter["peak_busbw"]["mean"]))
                        if intra and inter and intra["peak_busbw"]["mean"] > 0 else None)
        b.metrics["reduction_vs_single_node"] = red

    for path, rule in manifest.violations:
        b, subj = _path_subject(path, block)
        b.findings += _finalize_ids([Finding(f"validity-{len(b.findings):04d}", Severity.FAIL, subj,
                                             f"{path or 'campaign'}: {rule}",
                                             "the run does not satisfy its record invariants")])
    for path, err in manifest.errors:
        b, subj = _path_subject(path, block)
        b.findings += _finalize_ids([Finding(f"parse-{len(b.findings):04d}", Severity.FAIL, subj,
                                             f"{path}: {err}", "the benchmark output could not be parsed")])
    for path in manifest.missing:
        b, subj = _path_subject(path, block)
        b.findings += _finalize_ids([Finding(f"missing-{len(b.findings):04d}", Severity.WARN, subj,
                                             f"expected result {path} is absent",
                                             "rerun the job or drop it from the plan")])

    ordered = [blocks[k] for k in sorted(blocks)]
    for b in ordered:
        b.findings = sort_findings(b.findings)
    return Evaluation(ordered, manifest.plan_digest)


def _path_subject(path: str, block) -> tuple[ComparisonBlock, Subject]:
    parts = PurePosixPath(path).parts
    if len(parts) == 4:
        system, env, slug, name = parts
        nodes = int(name.split("n_", 1)[0]) if "n_" in name else 0
        return block(system, slug), Subject(slug, system, env, nodes)
    return block("", "campaign"), Subject("campaign", "")


def analysis_lines(ev: Evaluation) -> list[str]:
    """Short human summary printed by ``analyze``."""
    out = []
    for b in ev.blocks:
        m = b.metrics
        kind = m.get("kind")
        head = f"{b.system} {b.benchmark}"
        if kind == "strong":
            for p in m["points"]:
                eff = p["efficiency"]
                out.append(f"{head} {p['nodes']}n: efficiency native {_pct(eff['native'])}, "
                           f"container {_pct(eff['container'])}, overhead {_pct(p['relative_overhead'])}")
        elif kind == "weak":
            for p in m["points"]:
                nz = p["normalized"]
                out.append(f"{head} {p['nodes']}n: normalized native {_fix(nz['native'])}, "
                           f"container {_fix(nz['container'])}, overhead {_pct(p['relative_overhead'])}")
        elif kind == "init":
            for p in m["points"]:
                out.append(f"{head} {p['nodes']}n: overhead {_pct(p['relative_overhead'])}")
        elif kind == "latency":
            for name, r in m["regimes"].items():
                out.append(f"{head} {name}: mean delta {r['mean_abs_delta']:.3f} us, "
                           f"relative {_pct(r['mean_rel_delta'])}")
        elif kind == "nccl":
            out.append(f"{head}: parity deviation {_pct(m['parity_deviation'], 2)}")
            red = m.get("reduction_vs_single_node")
            if red:
                out.append(f"{head}: reduction vs single node native {_pct(red['native'])}, "
                           f"container {_pct(red['container'])}")
        if kind in ("strong", "weak") and m.get("pattern"):
            pat = m["pattern"]
            out.append(f"{head}: overhead pattern {pat['kind']}")
    return out


def _pct(x: float | None, digits: int = 1) -> str:
    return "n/a" if x is None else f"{x * 100:.{digits}f}%"


def _fix(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.4f}"
