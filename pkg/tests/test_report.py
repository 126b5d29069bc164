import csv
import json

import pytest

from conftest import ARBOR_CLEAN, ARBOR_STRONG, campaign_plan, fill_campaign
from dualbench.harness import ingest, plan_from_mapping
from dualbench.pipeline import analysis_lines, evaluate
from dualbench.report import (
    CSV_COLUMNS,
    ComparisonBlock,
    Measure,
    Ratio,
    ReportDocument,
    emit_json,
    emit_markdown,
    emit_plot_csv,
)
from dualbench.verdict import Finding, Severity, Status, Subject


@pytest.fixture
def evaluation(tmp_path, request):
    plan = plan_from_mapping(campaign_plan())
    fill_campaign(tmp_path / "results", arbor=getattr(request, "param", None) or ARBOR_CLEAN)
    return evaluate(ingest(tmp_path / "results", plan), plan=plan)


def test_number_classes():
    doc = ReportDocument("d", [ComparisonBlock("s", "b", {"r": Ratio(2435 / (28.2 * 128)),
                                                          "m": Measure(1 / 3), "z": Ratio(-0.0),
                                                          "bad": Ratio(float("nan"))})], Status.PASS)
    text = emit_json(doc)
    assert '"r":0.6746' in text and '"m":0.333' in text and '"z":0.0000' in text
    assert '"bad":null' in text
    json.loads(text)


def test_pass_block_without_findings():
    doc = ReportDocument("d", [ComparisonBlock("karolina", "osu_init", {"kind": None})], Status.PASS)
    d = json.loads(emit_json(doc))
    assert d["status"] == "pass" and d["comparisons"][0]["findings"] == []
    assert d["summary"] == {"info": 0, "warn": 0, "fail": 0}
    md = emit_markdown(doc)
    assert "Overall status: **pass**" in md and "None." in md


def test_empty_report():
    doc = ReportDocument("d", [], Status.PASS)
    assert "No comparisons." in emit_markdown(doc)
    assert json.loads(emit_json(doc))["comparisons"] == []


def test_duplicate_ids_rejected():
    f = Finding("x", Severity.INFO, Subject("b", "s"), "e")
    with pytest.raises(ValueError):
        ReportDocument("d", [ComparisonBlock("s", "b", {}, [f, f])], Status.PASS)


measured_values = pytest.mark.parametrize("evaluation", [ARBOR_STRONG], indirect=True)


@measured_values
def test_report_from_campaign(evaluation):
    doc = evaluation.document()
    d = json.loads(emit_json(doc))
    strong = next(c for c in d["comparisons"] if c["benchmark"] == "arbor_strong")
    at128 = strong["metrics"]["points"][-1]
    assert at128["efficiency"] == {"native": 0.6746, "container": 0.6268}
    # -1.8% at one node to +5.7% at 128 nodes: a rise above the default 0.05
    assert strong["metrics"]["pattern"]["kind"] == "growing_with_scale"
    assert doc.status is Status.FAIL
    md = emit_markdown(doc)
    assert "| nodes | native | container | efficiency native |" in md
    assert "Lower is better." in md
    assert "67.5%" in md and "62.7%" in md


@pytest.mark.parametrize("evaluation", [None], indirect=True)
def test_clean_campaign_passes(evaluation):
    assert evaluation.document().status is Status.PASS


def test_findings_sorted_by_severity_in_markdown():
    s = Subject("b", "s")
    fs = [Finding("a", Severity.INFO, s, "i"), Finding("b", Severity.FAIL, s, "f"),
          Finding("c", Severity.WARN, s, "w")]
    md = emit_markdown(ReportDocument("d", [ComparisonBlock("s", "b", {"kind": None}, fs)], Status.FAIL))
    assert md.index("**FAIL**") < md.index("**WARN**") < md.index("**INFO**")


def test_json_is_byte_identical(evaluation):
    assert emit_json(evaluation.document()) == emit_json(evaluation.document())


def test_plot_csv(evaluation, tmp_path):
    paths = emit_plot_csv(evaluation.document(), tmp_path / "plots")
    names = sorted(p.name for p in paths)
    assert names == ["karolina_arbor_strong_scaling.csv", "karolina_osu_init_init.csv"]
    rows = list(csv.reader((tmp_path / "plots" / "karolina_arbor_strong_scaling.csv").open()))
    assert rows[0] == CSV_COLUMNS and len(rows) == 4
    init = list(csv.DictReader((tmp_path / "plots" / "karolina_osu_init_init.csv").open()))
    # one run per point: the band is the per-process min/max from the run itself
    assert init[0]["native_low"] == "360.000" and init[0]["native_high"] == "440.000"
    assert init[0]["container_mean"] == "300.000"


@measured_values
def test_analysis_lines(evaluation):
    text = "\n".join(analysis_lines(evaluation))
    assert "128n: efficiency native 67.5%, container 62.7%" in text
    assert "karolina osu_init 1n: overhead -25.0%" in text
