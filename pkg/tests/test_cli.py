import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest
import yaml

from longctl.agent import DdpgAgent
from longctl.cli import main, parse_controller
from longctl.errors import ConfigError
from longctl.evaluation import default_decels

SVG = "{http://www.w3.org/2000/svg}"
DEC = [-7.5, -5.0, -2.5]
SMALL = {
    "grid": {"lead_decels": DEC, "follow_decels": DEC, "runs_per_cell": 2},
    "agent": {"hidden": [16, 16], "max_episodes": 2, "episode_steps": 40, "batch": 16, "warmup": 16, "memory": 200},
    "calibration": {"gen": {"n": 400}, "fit": {"layers": [2, 32, 32, 2], "epochs": 15, "batch": 64}},
}


@pytest.fixture
def small(tmp_path):
    path = tmp_path / "small.yaml"
    path.write_text(yaml.safe_dump(SMALL))
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def svg_root(path):
    text = path.read_text()
    assert "href" not in text
    return ET.fromstring(text)


class TestExitCodes:
    def test_no_command(self, capsys):
        assert run() == 2

    def test_unknown_scenario(self, tmp_path):
        assert run("scenario", "--id", 9, "--out", tmp_path) == 4

    def test_missing_checkpoint(self, tmp_path):
        assert run("scenario", "--id", 3, "--controller", "rl:/nonexistent.npz", "--out", tmp_path) == 3

    def test_bad_config(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("grid: {bogus: 1}\n")
        assert run("eval-grid", "--config", tmp_path / "bad.yaml", "--out", tmp_path) == 2

    def test_bad_controller(self, tmp_path):
        assert run("eval-grid", "--controller", "magic", "--out", tmp_path) == 2

    def test_missing_dataset(self, tmp_path):
        assert run("calibrate", "fit", "--out", tmp_path) == 5

    def test_missing_model(self, tmp_path, small):
        assert run("calibrate", "gen", "--config", small, "--out", tmp_path) == 0
        assert run("calibrate", "eval", "--config", small, "--out", tmp_path) == 3

    def test_empty_report(self, tmp_path):
        assert run("report", tmp_path) == 4

    def test_missing_report_dir(self, tmp_path):
        assert run("report", tmp_path / "nope") == 5


def test_dump_defaults(capsys):
    assert run("--dump-defaults") == 0
    tree = yaml.safe_load(capsys.readouterr().out)
    assert tree["grid"]["lead_decels"] == default_decels()
    assert tree["agent"]["gamma"] == 0.99 and tree["reward"]["c3"] == 10.0


def test_parse_controller():
    assert parse_controller("baseline") == ("baseline", None)
    assert parse_controller("rl:x.npz")[1].name == "x.npz"
    with pytest.raises(ConfigError):
        parse_controller("rl:")


class TestEvalGrid:
    def test_artifacts_and_reproducibility(self, tmp_path, small, capsys):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("eval-grid", "--config", small, "--out", a) == 0
        assert "success over feasible" in capsys.readouterr().out
        assert run("eval-grid", "--config", small, "--out", b, "--workers", 2) == 0
        for name in ("grid_baseline.json", "grid_baseline.csv", "grid_baseline.svg"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert json.loads((a / "grid_baseline.meta.json").read_text())["elapsed_s"] >= 0

    def test_heatmap_structure(self, tmp_path):
        assert run("eval-grid", "--runs", 1, "--out", tmp_path, "--controller", "untrained") == 0
        root = svg_root(tmp_path / "grid_untrained.svg")
        cells = [r for r in root.iter(f"{SVG}rect") if r.get("class") == "cell"]
        assert len(cells) == 400
        assert root.find(f".//{SVG}path[@class='feasibility']") is not None

    def test_rl_checkpoint(self, tmp_path, small):
        DdpgAgent(seed=0, hidden=(16, 16)).save(tmp_path / "p.npz")
        assert run("eval-grid", "--config", small, "--out", tmp_path, "--controller", f"rl:{tmp_path / 'p.npz'}") == 0
        assert json.loads((tmp_path / "grid_rl.json").read_text())["controller"] == "rl"


class TestScenario:
    def test_baseline_scenario_3(self, tmp_path, capsys):
        assert run("scenario", "--id", 3, "--out", tmp_path) == 0
        assert "collision" in capsys.readouterr().out
        data = json.loads((tmp_path / "scenario3_baseline.json").read_text())
        rows = (tmp_path / "scenario3_baseline.csv").read_text().splitlines()
        assert data["collided"] and len(rows) == data["steps"] + 2  # header plus steps + 1 states
        root = svg_root(tmp_path / "scenario3_baseline.svg")
        assert root.find(f".//{SVG}circle[@class='collision']") is not None

    def test_clean_scenario_has_no_marker(self, tmp_path):
        assert run("scenario", "--id", 4, "--out", tmp_path) == 0
        root = svg_root(tmp_path / "scenario4_baseline.svg")
        assert root.find(f".//{SVG}circle[@class='collision']") is None

    def test_byte_reproducible(self, tmp_path):
        for d in ("a", "b"):
            assert run("scenario", "--id", 1, "--out", tmp_path / d) == 0
        for name in ("scenario1_baseline.csv", "scenario1_baseline.json", "scenario1_baseline.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestCalibrate:
    def test_pipeline(self, tmp_path, small, capsys):
        for stage in ("gen", "fit", "eval"):
            assert run("calibrate", stage, "--config", small, "--out", tmp_path) == 0
        rep = json.loads((tmp_path / "calibration.json").read_text())
        assert rep["calibrated_rmse"] < rep["raw_rmse"]
        assert len((tmp_path / "loss_curve.csv").read_text().splitlines()) == 16
        svg_root(tmp_path / "loss_curve.svg")

    def test_fit_reproducible(self, tmp_path, small):
        for d in ("a", "b"):
            for stage in ("gen", "fit"):
                assert run("calibrate", stage, "--config", small, "--out", tmp_path / d) == 0
        for name in ("calib_data.csv", "calib_model.npz", "loss_curve.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestTrain:
    def test_artifacts_and_reproducibility(self, tmp_path, small, capsys):
        for d in ("a", "b"):
            assert run("train", "--config", small, "--seeds", "20..22", "--no-eval", "--out", tmp_path / d) == 0
        a = tmp_path / "a"
        header = (a / "reward_curve.csv").read_text().splitlines()[0]
        assert header == "episode,seed20,seed21,seed22,mean,std"
        for name in ("reward_curve.csv", "best.npz", "train_summary.json", "reward_curve.svg"):
            assert (a / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
        root = svg_root(a / "reward_curve.svg")
        assert root.find(f".//{SVG}polygon[@class='band']") is not None
        assert json.loads((a / "train_summary.json").read_text())["artifact"] == "training"


class TestReport:
    def test_partial_directory(self, tmp_path, small, capsys):
        assert run("eval-grid", "--config", small, "--out", tmp_path) == 0
        assert run("report", tmp_path) == 0
        table = capsys.readouterr().out
        lines = {line.split()[1]: line for line in table.splitlines()[2:] if line.startswith("grid")}
        assert "% success over feasible" in lines["baseline"]
        assert lines["rl"].endswith("n/a") and "calibration" in table
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["schema_version"] == 1 and summary["calibration"] is None

    def test_full_directory(self, tmp_path, small, capsys):
        DdpgAgent(seed=0, hidden=(16, 16)).save(tmp_path / "p.npz")
        assert run("eval-grid", "--config", small, "--out", tmp_path) == 0
        assert run("eval-grid", "--config", small, "--out", tmp_path, "--controller", f"rl:{tmp_path / 'p.npz'}") == 0
        assert run("scenario", "--id", 3, "--out", tmp_path) == 0
        for stage in ("gen", "fit", "eval"):
            assert run("calibrate", stage, "--config", small, "--out", tmp_path) == 0
        capsys.readouterr()
        assert run("report", tmp_path) == 0
        table = capsys.readouterr().out
        assert table.count("% success over feasible") == 2
        assert "baseline:3" in table and "COLLISION" in table and " m" in table.splitlines()[-1]
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary["grids"]) == {"baseline", "rl"}
        assert np.isfinite(summary["calibration"]["raw_rmse"])
