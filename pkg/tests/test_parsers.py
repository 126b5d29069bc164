import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import fixture_text, render_app, render_init, render_latency, render_nccl
from dualbench import parsers
from dualbench.model import (
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
    payload_to_dict,
)
from dualbench.parsers import TransportRule, TransportRuleset


def canon(payload) -> str:
    return json.dumps(payload_to_dict(payload), sort_keys=True, separators=(",", ":")) + "\n"


@pytest.mark.parametrize("fixture,parse", [
    ("osu_latency", parsers.parse_osu_latency),
    ("osu_init", parsers.parse_osu_init),
    ("nccl_allreduce", parsers.parse_nccl_allreduce),
    ("app_timing", lambda t: parsers.parse_app_timing(t, "arbor")),
])
def test_golden_fixtures(fixture, parse):
    payload = parse(fixture_text(f"{fixture}.txt"))
    assert canon(payload) == fixture_text(f"{fixture}.golden.json")


def test_osu_latency_points():
    s = parsers.parse_osu_latency(fixture_text("osu_latency.txt"))
    assert s.points == (MessageSizePoint(8, 1.25), MessageSizePoint(1024, 1.90))


@pytest.mark.parametrize("fixture,error", [
    ("osu_latency_unordered.txt", parsers.SizeOrdering),
    ("osu_latency_comments_only.txt", parsers.EmptyOutput),
    ("osu_latency_malformed.txt", parsers.MalformedRow),
])
def test_osu_latency_errors(fixture, error):
    with pytest.raises(error):
        parsers.parse_osu_latency(fixture_text(fixture))


def test_malformed_row_reports_line_number():
    with pytest.raises(parsers.MalformedRow) as exc:
        parsers.parse_osu_latency(fixture_text("osu_latency_malformed.txt"))
    assert exc.value.line_no == 3


@pytest.mark.parametrize("row", ["1,024 1.90", "8 1,25", "8 nan", "8 inf", "8 1_0", "-8 1.0"])
def test_osu_latency_rejects_odd_numbers(row):
    with pytest.raises(parsers.MalformedRow):
        parsers.parse_osu_latency(row + "\n")


def test_osu_init():
    t = parsers.parse_osu_init(fixture_text("osu_init.txt"))
    assert t == InitTiming(256, 312.10, 498.72, 401.55)


def test_osu_init_integer_timings():
    # osu_init prints whole milliseconds on some versions
    t = parsers.parse_osu_init("nprocs: 2, min: 18 ms, max: 19 ms, avg: 18 ms\n")
    assert t == InitTiming(2, 18.0, 19.0, 18.0)


def test_osu_init_errors():
    with pytest.raises(parsers.OrderingViolation):
        parsers.parse_osu_init(fixture_text("osu_init_unordered.txt"))
    with pytest.raises(parsers.UnitMismatch):
        parsers.parse_osu_init(fixture_text("osu_init_unit.txt"))
    with pytest.raises(parsers.MissingField) as exc:
        parsers.parse_osu_init("")
    assert exc.value.name == "nprocs"
    with pytest.raises(parsers.MissingField) as exc:
        parsers.parse_osu_init("nprocs: 4, min: 1.0 ms, max: 2.0 ms\n")
    assert exc.value.name == "avg"


def test_nccl_rows_and_average():
    t = parsers.parse_nccl_allreduce(fixture_text("nccl_allreduce.txt"))
    assert [r.size for r in t.rows] == [8, 4294967296]
    assert [r.oop_busbw for r in t.rows] == [0.0, 225.0]
    assert t.avg_busbw == 112.4875


def test_nccl_wrong_counts_are_recorded_not_judged():
    t = parsers.parse_nccl_allreduce(fixture_text("nccl_allreduce_wrong.txt"))
    assert t.rows[1].oop_wrong == 3


def test_nccl_errors():
    with pytest.raises(parsers.MissingAvgBandwidth):
        parsers.parse_nccl_allreduce(fixture_text("nccl_allreduce_truncated.txt"))
    with pytest.raises(parsers.MalformedRow):
        parsers.parse_nccl_allreduce("8 2 float sum -1 1.0 0.0 0.0 0\n# Avg bus bandwidth : 1.0\n")
    with pytest.raises(parsers.EmptyOutput):
        parsers.parse_nccl_allreduce("# Avg bus bandwidth : 1.0\n")


def test_app_timing():
    t = parsers.parse_app_timing(fixture_text("app_timing.txt"), "arbor")
    assert t == AppTiming("arbor", 2435.0, {"cells": 128000})
    with pytest.raises(parsers.DuplicateSimTime):
        parsers.parse_app_timing(fixture_text("app_timing_duplicate.txt"), "arbor")
    with pytest.raises(parsers.MissingSimTime):
        parsers.parse_app_timing(fixture_text("app_timing_missing.txt"), "arbor")


# -- round trips and purity ---------------------------------------------------------------

pos_float = st.floats(min_value=1e-3, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def init_timings(draw):
    lo, mid, hi = sorted(draw(st.lists(pos_float, min_size=3, max_size=3)))
    return InitTiming(draw(st.integers(1, 100000)), lo, hi, mid)


@given(init_timings())
def test_init_round_trip(t):
    assert parsers.parse_osu_init(render_init(t)) == t


@given(st.sampled_from(["arbor", "neuron"]), pos_float,
       st.dictionaries(st.from_regex(r"[a-z][a-z_]{0,10}", fullmatch=True),
                       st.one_of(st.integers(0, 10**9), pos_float), max_size=5))
def test_app_timing_round_trip(app, seconds, workload):
    t = AppTiming(app, seconds, workload)
    assert parsers.parse_app_timing(render_app(t), app) == t


@given(st.lists(st.tuples(st.integers(0, 2**32), pos_float), min_size=1, max_size=20,
                unique_by=lambda p: p[0]))
def test_latency_round_trip_and_purity(pairs):
    s = MessageSizeSeries(tuple(MessageSizePoint(a, b) for a, b in sorted(pairs)))
    text = render_latency(s)
    assert parsers.parse_osu_latency(text) == s
    assert parsers.parse_osu_latency(text) == parsers.parse_osu_latency(text)


@given(st.lists(st.tuples(pos_float, pos_float), min_size=1, max_size=8))
def test_nccl_round_trip(bws):
    rows = tuple(NcclRow(8 * 2**i, 2 * 2**i, "float", "sum", 10.0 + i, a, b, 0, 11.0 + i, a, b, 0)
                 for i, (a, b) in enumerate(bws))
    t = NcclTable(rows, bws[0][1])
    assert parsers.parse_nccl_allreduce(render_nccl(t)) == t


def test_no_fabricated_values():
    text = fixture_text("nccl_allreduce.txt")
    t = parsers.parse_nccl_allreduce(text)
    for row in t.rows:
        for v in (row.oop_time, row.oop_algbw, row.oop_busbw, row.ip_time, row.ip_busbw):
            assert any(float(tok) == v for tok in text.split() if parsers._float(tok) is not None)


# -- transport logs ------------------------------------------------------------------------


def test_nccl_p2p_rule():
    rs = TransportRuleset((TransportRule(LogSource.NCCL, "P2P", Scope.GPU_PEER_TO_PEER,
                                         Mechanism.NVLINK_P2P),))
    line = "cn1:1:2 [0] NCCL INFO Channel 00/0 : 0[0] -> 1[1] via P2P/CUMEM"
    [obs] = parsers.parse_transport_log(line, rs)
    assert obs.mechanism is Mechanism.NVLINK_P2P and obs.scope is Scope.GPU_PEER_TO_PEER
    assert obs.raw_line == line and obs.source is LogSource.NCCL


def test_ucx_tcp_rule():
    rs = TransportRuleset((TransportRule(LogSource.UCX, "tcp", Scope.INTER_NODE_CPU, Mechanism.TCP),))
    [obs] = parsers.parse_transport_log(fixture_text("transport_tcp.trace").splitlines()[2], rs)
    assert obs.mechanism is Mechanism.TCP and obs.scope is Scope.INTER_NODE_CPU


def test_gdrdma_rule():
    rs = TransportRuleset((TransportRule(LogSource.NCCL, "GDRDMA", Scope.GPU_NETWORK,
                                         Mechanism.IB_NET_GDRDMA),))
    [obs] = parsers.parse_transport_log("x [0] NCCL INFO Channel 01/0 : 0[0] -> 8[0] via NET/IB/0/GDRDMA", rs)
    assert obs.mechanism is Mechanism.IB_NET_GDRDMA


def test_first_match_wins():
    rs = TransportRuleset((
        TransportRule(LogSource.NCCL, "NET/IB", Scope.GPU_NETWORK, Mechanism.IB_NET_PLAIN),
        TransportRule(LogSource.NCCL, "GDRDMA", Scope.GPU_NETWORK, Mechanism.IB_NET_GDRDMA),
    ))
    [obs] = parsers.parse_transport_log("NCCL INFO via NET/IB/0/GDRDMA", rs)
    assert obs.mechanism is Mechanism.IB_NET_PLAIN


def test_unknown_keeps_token():
    rs = TransportRuleset(())
    [obs] = parsers.parse_transport_log("NCCL INFO Channel 00 : 0 -> 1 via FOO/BAR", rs)
    assert obs.mechanism is Mechanism.UNKNOWN and obs.raw_token == "FOO/BAR"


def test_transport_log_without_transport_content():
    assert parsers.parse_transport_log("hello\nNCCL INFO Connected all rings\n",
                                       parsers.default_ruleset()) == []


def test_default_ruleset_on_fixtures():
    obs = parsers.parse_transport_log(fixture_text("transport_clean.trace"), parsers.default_ruleset())
    assert [(o.scope, o.mechanism) for o in obs] == [
        (Scope.INTRA_NODE_CPU, Mechanism.SHARED_MEMORY),
        (Scope.INTER_NODE_CPU, Mechanism.INFINIBAND_VERBS),
        (Scope.GPU_PEER_TO_PEER, Mechanism.NVLINK_P2P),
        (Scope.GPU_NETWORK, Mechanism.IB_NET_GDRDMA),
    ]
    obs = parsers.parse_transport_log(fixture_text("transport_tcp.trace"), parsers.default_ruleset())
    assert [o.mechanism for o in obs] == [Mechanism.SELF, Mechanism.SHARED_MEMORY, Mechanism.TCP]


def test_default_ruleset_pcie_system():
    pcie = SystemDescriptor("pc", 64, 2, 1, Interconnect.PCIE)
    [obs] = parsers.parse_transport_log("NCCL INFO Channel 00 : 0[0] -> 1[1] via P2P/IPC",
                                        parsers.default_ruleset(pcie))
    assert obs.mechanism is Mechanism.PCIE_P2P


def test_load_ruleset(tmp_path):
    p = tmp_path / "rules.yaml"
    p.write_text("sentinels: [via]\nrules:\n"
                 "  - {source: ucx, pattern: 'tcp/', scope: inter_node_cpu, mechanism: tcp}\n"
                 "  - {source: nccl, pattern: 'NET/IB', regex: true, scope: gpu_network,"
                 " mechanism: ib_net_plain}\n")
    rs = parsers.load_ruleset(p)
    assert len(rs.rules) == 2 and rs.rules[1].regex and rs.sentinels == ("via",)
    p.write_text("rules:\n  - {source: ucx, pattern: '', scope: inter_node_cpu, mechanism: tcp}\n")
    with pytest.raises(ValueError):
        parsers.load_ruleset(p)
    p.write_text("rules: []\nextra: 1\n")
    with pytest.raises(ValueError):
        parsers.load_ruleset(p)


# -- format detection --------------------------------------------------------------------------


@pytest.mark.parametrize("fixture,fmt,family", [
    ("osu_latency.txt", parsers.TextFormat.OSU_LATENCY, Family.OSU_LATENCY_INTER),
    ("osu_init.txt", parsers.TextFormat.OSU_INIT, Family.OSU_INIT),
    ("nccl_allreduce.txt", parsers.TextFormat.NCCL_ALLREDUCE, Family.NCCL_ALLREDUCE_SINGLE),
    ("app_timing.txt", parsers.TextFormat.APP_TIMING, Family.APP_STRONG),
])
def test_detect_format(fixture, fmt, family):
    got = parsers.detect_format(fixture_text(fixture))
    assert got is fmt and got.accepts(family)


def test_detect_format_unrecognized():
    assert parsers.detect_format("The quick brown fox.\n") is parsers.TextFormat.UNRECOGNIZED
    assert not parsers.TextFormat.UNRECOGNIZED.accepts(Family.OSU_INIT)
