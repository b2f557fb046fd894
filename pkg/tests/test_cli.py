"""CLI behavior: exit codes, artifact layout, batch and compare flows."""

import json
import os

import pytest

from skyscout.cli import main
from skyscout.config import ScenarioConfig, SceneSpec, dump_config
from skyscout.exploration import ExploreGridConfig


@pytest.fixture(scope="module")
def config_path(tmp_path_factory):
    cfg = ScenarioConfig(
        name="empty10",
        seed=0,
        mode="baseline",
        scene=SceneSpec(kind="empty", bounds_lo=(-6.0, -6.0, 0.0), bounds_hi=(6.0, 6.0, 4.0)),
        boundary=ExploreGridConfig(-5.0, 5.0, -5.0, 5.0, 0.1, 0.2, 2.0),
        budget_s=60.0,
    )
    path = tmp_path_factory.mktemp("cfg") / "empty10.json"
    dump_config(cfg, str(path))
    return str(path)


class TestRun:
    def test_success_exit_zero_and_artifacts(self, config_path, tmp_path):
        out = tmp_path / "run"
        code = main(["run", "--config", config_path, "--out", str(out)])
        assert code == 0
        names = set(os.listdir(out))
        assert {"metrics.csv", "trajectory.csv", "map.ply", "config-echo.json"} <= names

    def test_seed_and_mode_overrides_reach_echo(self, config_path, tmp_path):
        out = tmp_path / "run"
        code = main(
            ["run", "--config", config_path, "--out", str(out), "--seed", "5", "--mode", "direction"]
        )
        assert code == 0
        with open(out / "config-echo.json", "r", encoding="utf-8") as fh:
            echo = json.load(fh)
        assert echo["seed"] == 5
        assert echo["mode"] == "direction"

    def test_missing_config_exits_two(self, tmp_path):
        code = main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_malformed_config_exits_two(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"version": 1, "no_such_key": true}')
        code = main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert code == 2

    def test_bad_mode_rejected_by_parser(self, config_path, tmp_path):
        with pytest.raises(SystemExit):
            main(["run", "--config", config_path, "--out", str(tmp_path), "--mode", "turbo"])


@pytest.fixture(scope="module")
def batch_dir(config_path, tmp_path_factory):
    out = tmp_path_factory.mktemp("batch")
    code = main(["batch", "--config", config_path, "--seeds", "0..1", "--out", str(out)])
    assert code == 0
    return out


class TestBatchAndCompare:

    def test_batch_directory_layout(self, batch_dir):
        names = set(os.listdir(batch_dir))
        assert {
            "baseline-seed0",
            "direction-seed0",
            "baseline-seed1",
            "direction-seed1",
        } <= names
        assert os.path.isfile(batch_dir / "baseline-seed0" / "summary.json")

    def test_bad_seed_range_exits_two(self, config_path, tmp_path):
        code = main(["batch", "--config", config_path, "--seeds", "5..2", "--out", str(tmp_path)])
        assert code == 2
        code = main(["batch", "--config", config_path, "--seeds", "zebra", "--out", str(tmp_path)])
        assert code == 2

    def test_compare_writes_tables(self, batch_dir):
        code = main(["compare", "--out", str(batch_dir)])
        assert code == 0
        heading = (batch_dir / "compare_heading.csv").read_text().strip().split("\n")
        assert heading[0] == "seed,baseline_heading_rad,direction_heading_rad"
        assert heading[-1].startswith("mean,")
        coverage = (batch_dir / "compare_coverage.csv").read_text().strip().split("\n")
        assert len(coverage) == 3  # header + 2 seeds

    def test_compare_on_empty_dir_exits_two(self, tmp_path):
        assert main(["compare", "--out", str(tmp_path)]) == 2
        assert main(["compare", "--out", str(tmp_path / "missing")]) == 2
