import json

import pytest

from discrete_grad.cli import EXIT_CONFIG, EXIT_DATA, EXIT_USAGE, cli
from discrete_grad.experiments import read_csv


def _config(tmp_path, **cfg):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"schema_version": 1, **cfg}))
    return str(path)


def _error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return json.loads(err[0])


def test_unknown_flag_exit_code(capsys):
    assert cli(["grid", "--frobnicate"]) == EXIT_USAGE
    assert _error_line(capsys)["error"] == "usage"


def test_malformed_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli(["train", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert _error_line(capsys)["exit_code"] == EXIT_CONFIG
    assert cli(["train", "--config", _config(tmp_path, bogus_key=1), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    capsys.readouterr()
    assert cli(["train", "--config", _config(tmp_path, schema_version=99), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    capsys.readouterr()
    assert cli(["train", "--config", _config(tmp_path, epochs="many"), "--out", str(tmp_path / "o")]) == EXIT_CONFIG


def test_missing_dataset_exit_code(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DISCRETE_GRAD_DATA_DIR", str(tmp_path / "nowhere"))
    assert cli(["train", "--out", str(tmp_path / "o")]) == EXIT_DATA
    assert _error_line(capsys)["error"] == "missing_dataset"


def test_train_writes_run_directory(tmp_path):
    out = tmp_path / "run"
    cfg = _config(tmp_path, epochs=1, model="binary_ae", tau_forward=0.5, tau_backward=2.0)
    assert cli(["train", "--config", cfg, "--dataset", "synthetic", "--subset", "100", "--seed", "4",
                "--out", str(out)]) == 0
    echo = json.loads((out / "config.json").read_text())
    assert echo["seed"] == 4 and echo["subset"] == 100 and echo["epochs"] == 1
    summary = json.loads((out / "summary.json").read_text())
    rows = read_csv(out / "results.csv")
    assert {(r["tau_f"], r["tau_b"]) for r in rows} == {(0.5, 2.0)}
    assert summary["final_val_loss"] == [r["value"] for r in rows if r["metric"] == "final_val_loss"][0]


def test_grid_coupled_only_outputs_diagonal(tmp_path):
    out = tmp_path / "g"
    cfg = _config(tmp_path, coupled_only=True, epochs=1, tau_forward_values=[0.5, 1.0],
                  tau_backward_values=[0.5, 1.0, 3.0], seeds=[0])
    assert cli(["grid", "--config", cfg, "--dataset", "synthetic", "--subset", "100", "--out", str(out)]) == 0
    rows = read_csv(out / "results.csv")
    assert rows and all(r["tau_f"] == r["tau_b"] for r in rows)


def test_bias_variance_one_row_per_pair(tmp_path):
    out = tmp_path / "bv"
    cfg = _config(tmp_path, epochs=1, n_draws=8, n_samples=3)
    assert cli(["bias-variance", "--config", cfg, "--dataset", "synthetic", "--subset", "100", "--out", str(out)]) == 0
    rows = read_csv(out / "results.csv")
    assert len(rows) == 7 and len({(r["tau_f"], r["tau_b"]) for r in rows}) == 7
    assert (out / "snapshot.ckpt").exists()
    # the saved snapshot can be reused
    out2 = tmp_path / "bv2"
    cfg2 = _config(tmp_path, n_draws=8, n_samples=3, snapshot=str(out / "snapshot.ckpt"), pairs=[[1.0, 2.0]])
    assert cli(["bias-variance", "--config", cfg2, "--dataset", "synthetic", "--subset", "100", "--out", str(out2)]) == 0
    assert len(read_csv(out2 / "results.csv")) == 1


def test_gradient_gap_and_schedule_grid(tmp_path):
    cfg = _config(tmp_path, epochs=1, seeds=[0])
    assert cli(["gradient-gap", "--config", cfg, "--dataset", "synthetic", "--subset", "100",
                "--out", str(tmp_path / "gg")]) == 0
    summary = json.loads((tmp_path / "gg" / "summary.json").read_text())
    assert len(summary["mean_gap_by_tau_b"]) == 4
    cfg = _config(tmp_path, epochs=1, model="binary_ae")
    assert cli(["schedule-grid", "--config", cfg, "--dataset", "synthetic", "--subset", "100",
                "--out", str(tmp_path / "sg")]) == 0
    assert json.loads((tmp_path / "sg" / "summary.json").read_text())["n_cells"] == 13


def test_seed_flag_shifts_seed_list(tmp_path):
    cfg = _config(tmp_path, epochs=0, seeds=[0, 1], tau_forward_values=[1.0], tau_backward_values=[1.0])
    assert cli(["grid", "--config", cfg, "--seed", "10", "--dataset", "synthetic", "--subset", "50",
                "--out", str(tmp_path / "g")]) == 0
    assert json.loads((tmp_path / "g" / "config.json").read_text())["seeds"] == [10, 11]
