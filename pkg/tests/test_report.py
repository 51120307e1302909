import json
import re

import numpy as np
import pytest
from numpy.testing import assert_allclose

from fareaudit.audit import FareAuditConfig, run_fare_audit, run_wage_audit
from fareaudit.exceptions import DataError
from fareaudit.report import (
    ReportDocument,
    emit_plots,
    emit_report,
    load_report,
    normalize_timestamp,
    scatter_figure,
    stacked_bar_figure,
    subsample_points,
    validate_report,
)
from fareaudit.synth import SurveySpec, generate_survey


@pytest.fixture(scope="module")
def fare_doc(small_market):
    report = run_fare_audit(small_market.tnp, small_market.taxi, FareAuditConfig(seed=3))
    return ReportDocument.from_fare_audit(report, "cfg123")


@pytest.fixture(scope="module")
def wage_doc():
    report = run_wage_audit(generate_survey(SurveySpec(n=800, seed=2)))
    return ReportDocument.from_wage_audit(report, "cfg123", "abc")


def test_fare_report_validates(fare_doc):
    doc = json.loads(fare_doc.to_json())
    validate_report(doc)
    assert doc["kind"] == "fare_audit" and doc["schema_version"] == 1
    assert doc["metadata"]["dataset_digests"]["taxi"]
    broken = json.loads(fare_doc.to_json())
    del broken["payload"]["intervals"]
    with pytest.raises(DataError):
        validate_report(broken)


def test_nan_becomes_null():
    doc = ReportDocument("simulation", {"value": float("nan"), "arr": np.array([1.0, np.inf])})
    data = json.loads(doc.to_json())
    assert data["payload"] == {"value": None, "arr": [1.0, None]}


def test_emit_and_load_roundtrip(fare_doc, tmp_path):
    paths = emit_report(fare_doc, tmp_path)
    names = {p.name for p in paths}
    assert {"report.json", "coefficients.csv", "tests.csv", "predictions.csv"} <= names
    back = load_report(tmp_path)
    assert back.payload == json.loads(fare_doc.to_json())["payload"]
    assert_allclose(back.arrays["predictions"], fare_doc.arrays["predictions"], rtol=0, atol=0)
    tests_csv = (tmp_path / "tests.csv").read_text().splitlines()
    assert tests_csv[0] == "test,mode,statistic,df,p_value,alternative"
    assert len(tests_csv) == 4


def test_wage_tables(wage_doc, tmp_path):
    names = {p.name for p in emit_report(wage_doc, tmp_path)}
    assert "contingency_race.csv" in names and "pairwise_insurance.csv" in names and "ranking.csv" in names
    rows = (tmp_path / "contingency_race.csv").read_text().splitlines()
    assert rows[0].startswith("group,<$10")


def test_load_report_errors(tmp_path):
    with pytest.raises(DataError):
        load_report(tmp_path)
    (tmp_path / "report.json").write_text('{"kind": "fare_audit"}')
    with pytest.raises(DataError):
        load_report(tmp_path)


def test_normalize_timestamp(fare_doc):
    a = ReportDocument(**{**fare_doc.__dict__, "created_at": "2020-01-01T00:00:00Z"}).to_json()
    b = ReportDocument(**{**fare_doc.__dict__, "created_at": "2031-05-05T05:05:05Z"}).to_json()
    assert a != b and normalize_timestamp(a) == normalize_timestamp(b)


def test_subsample_points():
    assert np.array_equal(subsample_points(10, cap=50), np.arange(10))
    idx = subsample_points(1000, cap=100, seed=4)
    assert len(idx) == 100 and len(set(idx)) == 100 and np.all(np.diff(idx) > 0)
    assert np.array_equal(idx, subsample_points(1000, cap=100, seed=4))


def test_scatter_axes_square_with_identity():
    rng = np.random.default_rng(0)
    actual = rng.uniform(5, 40, 300)
    fig = scatter_figure(actual, actual + rng.normal(0, 3, 300))
    ax = fig.axes[0]
    assert ax.get_xlim() == ax.get_ylim()
    assert ax.get_aspect() == 1.0
    (line,) = [ln for ln in ax.get_lines() if ln.get_gid() == "identity"]
    x, y = line.get_data()
    assert_allclose(x, y)
    assert line.get_color() == "r" and line.get_linestyle() == ":"


def test_scatter_svg_identity_is_diagonal(fare_doc, tmp_path):
    (path,), _ = emit_plots(fare_doc, tmp_path)
    svg = path.read_text()
    block = re.search(r'<g id="identity">.*?d="M\s*([-\d.]+)\s+([-\d.]+)\s*L\s*([-\d.]+)\s+([-\d.]+)', svg, re.S)
    x0, y0, x1, y1 = map(float, block.groups())
    # SVG y grows downward: a 45-degree data line keeps x + y constant
    assert_allclose(x0 + y0, x1 + y1, atol=0.05)
    assert x1 > x0


def test_plots_are_byte_stable(fare_doc, wage_doc, tmp_path):
    for doc in (fare_doc, wage_doc):
        first, _ = emit_plots(doc, tmp_path / "a")
        second, _ = emit_plots(doc, tmp_path / "b")
        assert [p.read_bytes() for p in first] == [p.read_bytes() for p in second]


def test_stacked_bar_shares(wage_doc):
    summaries = wage_doc.payload["analyses"]["race"]["summaries"]
    fig, shares = stacked_bar_figure("race", summaries, wage_doc.payload["band_labels"])
    assert_allclose(shares.sum(axis=1), 1.0)
    assert shares.shape == (len(summaries), 7)
    assert fig.axes[0].get_ylim() == (0.0, 1.0)


def test_plots_skip_with_note(fare_doc, tmp_path):
    bare = ReportDocument("fare_audit", fare_doc.payload)
    paths, notes = emit_plots(bare, tmp_path)
    assert paths == [] and "skipped" in notes[0]
    assert emit_plots(ReportDocument("filter", {}), tmp_path)[0] == []
