import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from bezier_mpc.cli import EXIT_OK, EXIT_RUN, EXIT_SCENARIO, OUTPUT_ENV, main, parse_overrides
from bezier_mpc.scenario import ScenarioError
from bezier_mpc.trace import columns, read_csv

from conftest import SCENARIOS

SVG = "{http://www.w3.org/2000/svg}"


def test_run_trivial(tmp_path, capsys):
    assert main(["run", str(SCENARIOS / "trivial.yaml"), str(tmp_path)]) == EXIT_OK
    header, data = read_csv(tmp_path / "trace.csv")
    assert header == columns()
    assert data.shape[0] <= 2
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["outcome"] == "goal_reached"
    assert "goal_reached" in capsys.readouterr().out


def test_missing_file_exit_code(tmp_path, capsys):
    assert main(["run", str(tmp_path / "absent.yaml"), str(tmp_path)]) == EXIT_SCENARIO
    assert "not found" in capsys.readouterr().err


def test_goal_inside_obstacle_is_scenario_error(tmp_path):
    args = ["run", str(SCENARIOS / "fig5_static_obstacle.yaml"), str(tmp_path),
            "--set", "obstacles=[{center: [2.4, 0.0, 0.52], radius: 0.05}]"]
    assert main(args) == EXIT_SCENARIO


def test_safety_violation_exit_code(tmp_path):
    # obstacle sweeping through the start pose faster than the robot can react
    args = ["run", str(SCENARIOS / "trivial.yaml"), str(tmp_path), "--no-plots",
            "--set", "stop_on_goal=false", "--set", "duration=0.4",
            "--set", "obstacles=[{center: [0.4, 2.0, 0.52], radius: 0.05, velocity: [0, -20, 0]}]"]
    assert main(args) == EXIT_RUN
    assert json.loads((tmp_path / "summary.json").read_text())["outcome"] == "safety_violation"


def test_validate(capsys):
    assert main(["validate", str(SCENARIOS / "fig5_static_obstacle.yaml")]) == EXIT_OK
    assert "ok" in capsys.readouterr().out
    bad = ["validate", str(SCENARIOS / "fig5_static_obstacle.yaml"),
           "--set", "obstacles=[{center: [0.4, 0.0, 0.52], radius: 0.05}]"]
    assert main(bad) == EXIT_SCENARIO


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert main(["run", str(SCENARIOS / "trivial.yaml"), "--no-plots"]) == EXIT_OK
    assert (tmp_path / "trivial" / "trace.csv").is_file()
    assert not (tmp_path / "trivial" / "paths.svg").exists()


def test_parse_overrides():
    assert parse_overrides(["a.b=3", "c=[1, 2]", "d=text"]) == {"a.b": 3, "c": [1, 2], "d": "text"}
    with pytest.raises(ScenarioError):
        parse_overrides(["novalue"])


def test_fig5_plots(tmp_path):
    args = ["run", str(SCENARIOS / "fig5_static_obstacle.yaml"), str(tmp_path), "--max-loops", "30"]
    assert main(args) == EXIT_OK
    root = ET.parse(tmp_path / "paths.svg").getroot()
    assert root.tag == f"{SVG}svg"
    lines = root.findall(f".//{SVG}polyline")
    dashed = [el for el in lines if el.get("stroke-dasharray")]
    # right, left, midpoint and base histories plus task-plan overlays for both palms
    assert len(lines) - len(dashed) == 4
    assert len(dashed) >= 2 and len(dashed) % 2 == 0
    assert len(root.findall(f".//{SVG}circle")) == 2
    for el in lines:
        pts = np.array([p.split(",") for p in el.get("points").split()], dtype=float)
        assert pts.shape[1] == 2 and np.all(np.isfinite(pts))
    forces = ET.parse(tmp_path / "forces.svg").getroot()
    assert len(forces.findall(f".//{SVG}polyline")) == 6
    _, data = read_csv(tmp_path / "trace.csv")
    assert data.shape == (30, len(columns()))
