import json
from pathlib import Path

import pytest

from merge_stack.cli import main
from merge_stack.data import scenario_text
from merge_stack.simulation import CSV_COLUMNS


@pytest.fixture()
def scenario3_file(tmp_path):
    path = tmp_path / "scenario3.toml"
    path.write_text(scenario_text("scenario3"), encoding="utf-8")
    return path


@pytest.fixture()
def scenario1_file(tmp_path):
    path = tmp_path / "scenario1.toml"
    text = scenario_text("scenario1").replace("duration = 60.0", "duration = 6.0")
    path.write_text(text, encoding="utf-8")
    return path


def test_run_writes_logs_and_exits_clean(scenario3_file, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(["run", "--scenario", str(scenario3_file), "--out", str(out),
                 "--duration", "4"])
    assert code == 0
    summary = json.loads(capsys.readouterr().out)
    csv_path = Path(summary["log"])
    assert csv_path.exists()
    assert csv_path.read_text("utf-8").splitlines()[0] == ",".join(CSV_COLUMNS)
    assert csv_path.with_suffix(".jsonl").exists()


def test_run_degraded_exits_two(scenario1_file, tmp_path, capsys):
    # seed 0 of scenario 1 starts two followers outside the initial feasible
    # set, so the soft-terminal fallback engages
    code = main(["run", "--scenario", str(scenario1_file), "--out",
                 str(tmp_path / "out"), "--seed", "0", "--duration", "6"])
    assert code == 2
    summary = json.loads(capsys.readouterr().out)
    assert summary["degraded_events"] > 0


def test_run_missing_scenario_exits_one(tmp_path, capsys):
    code = main(["run", "--scenario", str(tmp_path / "nope.toml")])
    assert code == 1
    assert "error:" in capsys.readouterr().err


def test_sequence_outputs_assignment(scenario1_file, tmp_path, capsys):
    dump = tmp_path / "diag.json"
    code = main(["sequence", "--scenario", str(scenario1_file),
                 "--dump-diagnostics", str(dump)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert sorted(payload["sequence"]) == [0, 1, 2, 3, 4]
    assert payload["nodes_explored"] > 0
    assert set(payload["pairs"]) == {"spacing_dev", "sign_spacing",
                                     "sign_speed", "trend_penalty"}
    assert json.loads(dump.read_text("utf-8")) == payload


def test_sequence_fifo_baseline(scenario1_file, capsys):
    code = main(["sequence", "--scenario", str(scenario1_file),
                 "--baseline", "fifo"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["nodes_explored"] == 0


def test_gains_json_contract(capsys):
    code = main(["gains"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload) == {"K_b", "K_f", "k_f", "p", "q", "stable",
                            "worst_omega", "worst_magnitude"}
    assert len(payload["K_b"]) == 3
    assert len(payload["K_f"]) == 13


def test_feasible_set_json_and_point_cloud(tmp_path, capsys):
    cloud = tmp_path / "cloud.csv"
    code = main(["feasible-set", "--variant", "proposed", "--np", "6",
                 "--samples", "20000", "--point-cloud", str(cloud)])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["variant"] == "proposed"
    assert payload["volume"] > 0
    assert cloud.exists()
    header = cloud.read_text("utf-8").splitlines()[0]
    assert header == "spacing_dev_m,speed_diff_mps,accel_mps2"


def test_ensemble_writes_per_seed_logs(scenario1_file, tmp_path, capsys):
    out = tmp_path / "ens"
    code = main(["ensemble", "--scenario", str(scenario1_file), "--seeds", "2",
                 "--out", str(out), "--duration", "3"])
    assert code in (0, 2)
    payload = json.loads(capsys.readouterr().out)
    assert len(payload["runs"]) == 2
    assert len(list(out.glob("*.csv"))) == 2
