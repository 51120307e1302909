import json
import subprocess
import sys

import pytest

from fake_portal import FakePortal
from fareaudit.cli import dispatch
from test_ingest import ROWS


def run(*args, cwd=None):
    proc = subprocess.run([sys.executable, "-m", "fareaudit.cli", *map(str, args)], capture_output=True, text=True, cwd=cwd)
    return proc.returncode, proc.stdout, proc.stderr


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert dispatch(["simulate", "--out", str(out)]) == 0
    return out


def test_no_arguments_prints_usage():
    code, _, err = run()
    assert code == 1 and "usage" in err


def test_unknown_command_and_flag():
    assert run("bogus")[0] == 1
    assert run("fit", "--tnp", "x.csv", "--out", "o", "--frobnicate")[0] == 1


def test_help_exits_zero():
    code, out, _ = run("audit-fares", "--help")
    assert code == 0
    for flag in ("--config", "--seed", "--mode", "--alternative", "--level", "--out", "--sample-cap", "--model"):
        assert flag in out


def test_bad_config_is_usage_error(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[audit]\nmood = happy\n")
    code, _, err = run("simulate", "--config", cfg, "--out", tmp_path)
    assert code == 1 and "mood" in err


def test_simulate_outputs(simulated):
    assert {p.name for p in simulated.iterdir()} == {"tnp.csv", "taxi.csv", "survey.csv", "report.json"}
    doc = json.loads((simulated / "report.json").read_text())
    assert doc["kind"] == "simulation" and doc["payload"]["counts"] == {"tnp": 5000, "taxi": 2000, "survey": 3000}


def test_fit_then_audit_with_model(simulated, tmp_path):
    assert dispatch(["fit", "--tnp", str(simulated / "tnp.csv"), "--out", str(tmp_path / "fit")]) == 0
    model = tmp_path / "fit" / "model.json"
    assert json.loads(model.read_text())["format"] == "fareaudit-linear-model"
    args = ["audit-fares", "--taxi", str(simulated / "taxi.csv"), "--out"]
    assert dispatch(args + [str(tmp_path / "a"), "--model", str(model)]) == 0
    assert dispatch(args + [str(tmp_path / "b"), "--tnp", str(simulated / "tnp.csv")]) == 0
    a = json.loads((tmp_path / "a" / "report.json").read_text())["payload"]
    b = json.loads((tmp_path / "b" / "report.json").read_text())["payload"]
    assert a["t_effective"] == b["t_effective"]
    assert (tmp_path / "a" / "actual_vs_predicted.svg").exists()


def test_audit_flags_reach_the_report(simulated, tmp_path):
    code = dispatch([
        "audit-fares", "--tnp", str(simulated / "tnp.csv"), "--taxi", str(simulated / "taxi.csv"), "--out", str(tmp_path),
        "--mode", "independent", "--alternative", "two_sided", "--level", "0.9", "--sample-cap", "500", "--seed", "5", "--no-plots",
    ])
    assert code == 0
    p = json.loads((tmp_path / "report.json").read_text())["payload"]
    assert p["primary_mode"] == "independent"
    assert p["t_effective"]["independent"]["alternative"] == "two_sided"
    assert p["intervals"]["level"] == 0.9
    assert p["metrics"]["n_taxi"] == 500 and p["provenance"]["seed"] == 5


def test_empty_after_filter_names_rule(simulated, tmp_path):
    cfg = tmp_path / "late.cfg"
    cfg.write_text("[filter.taxi]\ndate_start = 2030-01-01T00:00:00\ndate_end = 2031-01-01T00:00:00\n")
    code, _, err = run("audit-fares", "--config", cfg, "--tnp", simulated / "tnp.csv", "--taxi", simulated / "taxi.csv", "--out", tmp_path)
    assert code == 2
    assert "out_of_window" in err


def test_missing_input_is_data_error(tmp_path):
    code, _, err = run("filter", "--input", tmp_path / "none.csv", "--kind", "taxi", "--out", tmp_path)
    assert code == 2 and err


def test_degenerate_fit_exits_3(tmp_path):
    # identical fares make the holdout R^2 undefined
    header = "trip_id,trip_start_timestamp,trip_miles,trip_seconds,pickup_community_area,dropoff_community_area,fare,additional_charges,shared_trip_authorized"
    rows = [f"t{i},2023-03-0{1 + i % 9}T1{i % 10}:00:00,{1 + i % 5},{100 + i},{1 + i % 77},{1 + (5 * i) % 77},10.0,0,false" for i in range(400)]
    path = tmp_path / "flat.csv"
    path.write_text("\n".join([header, *rows]) + "\n")
    code, _, err = run("fit", "--tnp", path, "--out", tmp_path / "o")
    assert code == 3 and "R^2" in err


def test_filter_command(simulated, tmp_path, capsys):
    assert dispatch(["filter", "--input", str(simulated / "taxi.csv"), "--kind", "taxi", "--out", str(tmp_path)]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["input"] == stats["retained"] == 2000
    assert (tmp_path / "taxi_filtered.csv").read_text().count("\n") == 2001


def test_audit_wages_and_report(simulated, tmp_path, capsys):
    assert dispatch(["audit-wages", "--survey", str(simulated / "survey.csv"), "--out", str(tmp_path / "w"), "--no-plots"]) == 0
    ranking = capsys.readouterr().out.split()
    assert ranking[0] == "race:"
    assert dispatch(["report", "--in", str(tmp_path / "w"), "--out", str(tmp_path / "plots")]) == 0
    assert len(list((tmp_path / "plots").glob("wage_*.svg"))) == 6


def test_report_on_invalid_dir(tmp_path):
    assert run("report", "--in", tmp_path)[0] == 2


def test_study(tmp_path, capsys):
    cfg = tmp_path / "small.cfg"
    cfg.write_text("[market]\nn_tnp = 400\nn_taxi = 150\n[audit]\nmode = independent\n")
    assert dispatch(["simulate", "--config", str(cfg), "--out", str(tmp_path), "--study", "calibration", "--replications", "50"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["replications"] == 50 and 0 <= result["rate"] <= 0.2
    assert dispatch(["simulate", "--out", str(tmp_path), "--study", "calibration", "--replications", "5"]) == 1


def test_ingest_command(tmp_path):
    with FakePortal({"n26f-ihde": ROWS}) as portal:
        cfg = tmp_path / "portal.cfg"
        cfg.write_text(f"[source.tnp]\nbase_url = {portal.base_url}\npage_size = 10\nmin_delay = 0\n")
        code, out, err = run("ingest", "--config", cfg, "--source", "tnp", "--out", tmp_path / "cache", "--export", tmp_path / "tnp.csv")
        assert code == 0, err
        assert json.loads(out)["row_count"] == 23
        assert dispatch(["filter", "--config", str(cfg), "--input", str(tmp_path / "tnp.csv"), "--kind", "tnp", "--out", str(tmp_path / "f")]) == 0
