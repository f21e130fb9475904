"""
Tests for the command-line interface and ablation grids
"""

import csv
import json
import os

import pytest
import yaml

from iee_sparse_engine.__main__ import main
from iee_sparse_engine.core.engine import IeeEngine
from iee_sparse_engine.core.orchestrator import RunResult
from iee_sparse_engine.errors import ConfigError
from iee_sparse_engine.harness.ablation import AblationGrid, ablate, grid_cells, load_grid
from iee_sparse_engine.harness.config import parse_config


def _write_yaml(path, data):
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f)
    return path


@pytest.fixture
def config_path(tiny_config, temp_dir):
    """tiny_config written to disk"""
    return _write_yaml(os.path.join(temp_dir, "tiny.yaml"), tiny_config)


class TestCli:
    """Subcommands and exit codes"""

    def test_train(self, config_path, temp_dir, capsys):
        """train runs every seed and prints metrics as JSON"""
        assert main(["train", "-c", config_path]) == 0
        output = json.loads(capsys.readouterr().out)
        assert output["name"] == "tiny"
        run = output["runs"][0]
        assert run["iterations"] == 24
        assert run["audit"]["chain_valid"]
        assert os.path.exists(os.path.join(temp_dir, "tiny", "seed-0", "events.jsonl"))

    def test_train_with_overrides(self, config_path, temp_dir, capsys):
        """--set and --seed override the file"""
        assert main(["train", "-c", config_path, "--seed", "3", "--set", "schedule.grow_init=zero"]) == 0
        output = json.loads(capsys.readouterr().out)
        assert output["runs"][0]["seed"] == 3
        with open(os.path.join(temp_dir, "tiny", "seed-3", "config.yaml"), encoding="utf-8") as f:
            assert yaml.safe_load(f)["schedule"]["grow_init"] == "zero"

    def test_bad_config_exit_code(self, tiny_config, temp_dir):
        """Configuration errors exit with 2"""
        tiny_config["schedule"]["K"] = 1
        path = _write_yaml(os.path.join(temp_dir, "bad.yaml"), tiny_config)
        assert main(["train", "-c", path]) == 2
        assert main(["train", "-c", os.path.join(temp_dir, "absent.yaml")]) == 2

    def test_diverged_run_exit_code(self, config_path, monkeypatch, capsys):
        """A run that stops on a non-finite loss still prints its metrics and exits with 4"""
        monkeypatch.setattr(IeeEngine, "execute", lambda self: RunResult(iterations=3, diverged=True))
        assert main(["train", "-c", config_path]) == 4
        captured = capsys.readouterr()
        assert json.loads(captured.out)["runs"][0]["diverged"]
        assert "RunDivergedError" in captured.err

    def test_malformed_override(self, config_path):
        """--set without '=' is a configuration error"""
        assert main(["flops", "-c", config_path, "--set", "schedule.H"]) == 2

    def test_flops(self, config_path, capsys):
        """flops prints every closed form at the config's sparsity"""
        assert main(["flops", "-c", config_path]) == 0
        output = json.loads(capsys.readouterr().out)
        assert output["zeta_d"] == 2 * (32 + 48 + 18)
        zp, zd = output["zeta_p"], output["zeta_d"]
        assert output["per_sample"]["iee"] == pytest.approx((11 * zp + zd) / 4)
        assert output["dense_fraction"]["dense"] == pytest.approx(1.0)

    def test_prune_plan(self, config_path, temp_dir, capsys):
        """prune-plan writes a synthetic table and keeps the plan within budget"""
        table = os.path.join(temp_dir, "latency.csv")
        assert main(["prune-plan", "-c", config_path, "--table", table, "--budget-ms", "0.15", "--synthetic"]) == 0
        output = json.loads(capsys.readouterr().out)
        assert os.path.exists(table)
        assert output["latency_ms"] <= 0.15 + 0.01 + 1e-9
        assert output["dense_latency_ms"] > output["latency_ms"]
        assert all(layer["kept"] >= 1 for layer in output["layers"])

    def test_report(self, config_path, temp_dir, capsys):
        """report summarizes a training log"""
        main(["train", "-c", config_path])
        capsys.readouterr()
        log = os.path.join(temp_dir, "tiny", "seed-0", "events.jsonl")
        out = os.path.join(temp_dir, "report")
        assert main(["report", log, "-o", out]) == 0
        summaries = json.loads(capsys.readouterr().out)
        assert summaries[0]["chain_valid"]
        assert summaries[0]["strategy"] == "iee"
        assert os.path.exists(os.path.join(out, "summary.json"))

    def test_no_command(self, capsys):
        """Without a subcommand the help is printed"""
        assert main([]) == 0
        assert "usage" in capsys.readouterr().out


class TestAblation:
    """Grids of config overrides"""

    def test_grid_cells(self):
        """Axes form a product; explicit cells are crossed with it"""
        grid = AblationGrid(axes={"schedule.H": [1, 2], "schedule.J": [0, 3]})
        assert grid_cells(grid) == [
            {"schedule.H": 1, "schedule.J": 0},
            {"schedule.H": 1, "schedule.J": 3},
            {"schedule.H": 2, "schedule.J": 0},
            {"schedule.H": 2, "schedule.J": 3},
        ]
        explicit = AblationGrid(cells=[{"schedule.grow_init": "zero"}, {"schedule.J": 0}])
        assert grid_cells(explicit) == [{"schedule.grow_init": "zero"}, {"schedule.J": 0}]

    def test_load_grid(self, temp_dir):
        """Grid files reject unknown keys"""
        good = _write_yaml(os.path.join(temp_dir, "g.yaml"), {"axes": {"schedule.H": [1]}, "seeds": [0]})
        assert load_grid(good).seeds == [0]
        bad = _write_yaml(os.path.join(temp_dir, "b.yaml"), {"axis": {}})
        with pytest.raises(ConfigError):
            load_grid(bad)

    def test_invalid_cell_rejected_before_running(self, tiny_config, temp_dir):
        """A cell with an unknown key fails before any run starts"""
        grid = AblationGrid(cells=[{"schedule.K": 1}])
        with pytest.raises(ConfigError):
            ablate(parse_config(tiny_config), grid, out_dir=os.path.join(temp_dir, "abl"))
        assert not os.path.exists(os.path.join(temp_dir, "abl"))

    def test_ablate_writes_tables(self, tiny_config, temp_dir):
        """Two cells, one seed: results.csv and summary.csv"""
        out = os.path.join(temp_dir, "abl")
        grid = AblationGrid(cells=[{"schedule.grow_init": "zero"}, {"schedule.J": 0}], seeds=[0])
        results = ablate(parse_config(tiny_config), grid, out_dir=out, workers=1)
        assert [(r.cell, r.seed, r.status) for r in results] == [(0, 0, "ok"), (1, 0, "ok")]
        with open(os.path.join(out, "results.csv"), encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert [row["schedule.grow_init"] for row in rows] == ["zero", ""]
        with open(os.path.join(out, "summary.csv"), encoding="utf-8") as f:
            summary = list(csv.DictReader(f))
        assert len(summary) == 2
        assert summary[0]["seeds"] == "1"
        assert os.path.exists(os.path.join(out, "cell-01", "seed-0", "manifest.json"))

    def test_cli_ablate(self, config_path, temp_dir, capsys):
        """ablate subcommand runs a grid file"""
        grid = _write_yaml(os.path.join(temp_dir, "grid.yaml"), {"cells": [{"schedule.Q": 1}], "seeds": [0]})
        out = os.path.join(temp_dir, "abl")
        assert main(["ablate", "-c", config_path, "--grid", grid, "-o", out, "--workers", "1"]) == 0
        assert len(json.loads(capsys.readouterr().out)) == 1
        assert os.path.exists(os.path.join(out, "results.csv"))
