"""CLI subcommands and the exit-code contract (0 ok, 1 config, 2 runtime)."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from disco.cli import main
from disco.config import write_config

QUICK = {
    "name": "cliquick",
    "seed": 3,
    "scenario": {"num_classes": 4, "num_tasks": 2},
    "dataset": {"dim": 6, "train_per_class": 24, "test_per_class": 12},
    "arch": {"hidden_dims": [24, 24], "feature_dim": 16, "contrast_dim": 8},
    "train": {"epochs": 2, "milestones": [], "lr": 0.05, "batch_size": 16, "buffer_capacity": 16},
}


@pytest.fixture
def config_path(tmp_path) -> Path:
    path = tmp_path / "config.yaml"
    write_config(QUICK, path)
    return path


def _run_dir(tmp_path: Path) -> Path:
    return next(p for p in tmp_path.iterdir() if p.is_dir() and p.name.startswith("cliquick"))


def test_run_then_report_and_plot(tmp_path, config_path, capsys):
    assert main(["run", "--config", str(config_path), "--out", str(tmp_path)]) == 0
    run_dir = _run_dir(tmp_path)
    assert (run_dir / "accuracy_matrix.csv").exists()

    assert main(["report", str(run_dir), "--out", str(tmp_path / "report")]) == 0
    out = capsys.readouterr().out
    assert "AA:" in out

    assert main(["plot", str(run_dir), "--out", str(tmp_path / "plots")]) == 0
    assert (tmp_path / "plots" / "aa_curve.png").exists()
    assert (tmp_path / "plots" / "first_task.png").exists()


def test_run_seed_override(tmp_path, config_path):
    assert main(["run", "--config", str(config_path), "--seed", "9", "--out", str(tmp_path)]) == 0
    run_dir = _run_dir(tmp_path)
    assert "seed9" in run_dir.name


def test_missing_config_file_is_config_error():
    assert main(["run", "--config", "/nonexistent/cfg.yaml"]) == 1


def test_invalid_config_exits_1(tmp_path):
    path = tmp_path / "bad.yaml"
    bad = json.loads(json.dumps(QUICK))
    bad["train"]["epochs"] = 0
    write_config(bad, path)
    assert main(["run", "--config", str(path), "--out", str(tmp_path)]) == 1


def test_existing_run_dir_without_force_exits_1(tmp_path, config_path):
    assert main(["run", "--config", str(config_path), "--out", str(tmp_path)]) == 0
    assert main(["run", "--config", str(config_path), "--out", str(tmp_path)]) == 1
    assert main(["run", "--config", str(config_path), "--out", str(tmp_path), "--force"]) == 0


def test_runtime_failure_exits_2(tmp_path, config_path, monkeypatch):
    import disco.harness as harness_mod

    def boom(*args, **kwargs):
        raise RuntimeError("synthetic crash")

    monkeypatch.setattr(harness_mod, "run_all", boom)
    assert main(["run", "--config", str(config_path), "--out", str(tmp_path)]) == 2


def test_sweep_command(tmp_path, config_path, capsys):
    code = main([
        "sweep", "--config", str(config_path),
        "--grid", "lambda_tcon=0.5,1.0",
        "--seeds", "1",
        "--out", str(tmp_path),
    ])
    assert code == 0
    assert (tmp_path / "sweep" / "sweep.csv").exists()
    assert "(default)" in capsys.readouterr().out


def test_sweep_bad_grid_exits_1(tmp_path, config_path):
    assert main(["sweep", "--config", str(config_path), "--grid", "nonsense", "--out", str(tmp_path)]) == 1


def test_compare_command(tmp_path):
    cfg = json.loads(json.dumps(QUICK))
    cfg["scenario"]["domain_order"] = ["real", "contrast_invert"]
    path = tmp_path / "cfg.yaml"
    write_config(cfg, path)
    assert main(["compare", "--config", str(path), "--seeds", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "comparison" / "comparison.csv").exists()


def test_compare_without_domains_exits_1(tmp_path, config_path):
    assert main(["compare", "--config", str(config_path), "--seeds", "1", "--out", str(tmp_path)]) == 1


def test_export_features_command(tmp_path, config_path):
    assert main(["run", "--config", str(config_path), "--out", str(tmp_path)]) == 0
    run_dir = _run_dir(tmp_path)
    out = tmp_path / "export.csv"
    assert main(["export-features", str(run_dir), "--out", str(out)]) == 0
    assert out.exists()


def test_help_exits_0():
    assert main(["--help"]) == 0
    assert main(["run", "--help"]) == 0


def test_unknown_flag_exits_1(config_path):
    assert main(["run", "--config", str(config_path), "--frobnicate"]) == 1
