import numpy as np
import pytest

from bezier_mpc.scenario import ScenarioError, load_document, load_scenario, scenario_from_dict, set_path

from conftest import SCENARIOS

GOAL = {"right": [1.0, -0.22, 0.52], "left": [1.0, 0.22, 0.52]}


@pytest.mark.parametrize("path", sorted(SCENARIOS.glob("*.yaml")), ids=lambda p: p.stem)
def test_shipped_scenarios_load(path):
    sc = load_scenario(path)
    assert sc.name == path.stem
    assert (sc.p_goal is not None) != (sc.sine is not None) or sc.p_goal is not None


def test_defaults():
    sc = scenario_from_dict({"goal": GOAL})
    assert sc.t_loop == 0.02 and sc.d_safe == 0.3 and sc.planner == "bezier"
    np.testing.assert_array_equal(sc.start_q, np.zeros(18))
    assert sc.task.d_safe == sc.wholebody.d_safe == 0.3
    assert sc.stop_on_goal


def test_hold_goal_is_start_pose():
    sc = scenario_from_dict({"goal": {"hold": True}, "start_q": {"base": [0.5, 0.0, 0.2]}})
    fr = sc.model.frames(sc.start_q)
    np.testing.assert_allclose(sc.p_goal[:3], fr["right"][0])


def test_object_goal_places_palms_across_width():
    sc = scenario_from_dict({"goal": {"object_center": [1.0, 0.0, 0.5], "grasp_offset": 0.2}})
    np.testing.assert_allclose(sc.p_goal, [1.0, -0.2, 0.5, 1.0, 0.2, 0.5])


@pytest.mark.parametrize("doc", [
    {},
    {"goal": GOAL, "bogus": 1},
    {"goal": GOAL, "planner": "rk4"},
    {"goal": GOAL, "t_loop": 0.0},
    {"goal": GOAL, "start_q": [0.0] * 17},
    {"goal": GOAL, "start_q": {"upper": [50.0] * 15}},
    {"goal": {"right": [1, 0, 0]}},
    {"goal": GOAL, "obstacles": [{"center": [1, 0, 0], "radius": -1}]},
    {"goal": GOAL, "disturbances": [{"start": 0, "duration": 1, "target": "head", "force": [1, 0, 0]}]},
    {"goal": GOAL, "disturbances": [{"start": 0, "duration": 1, "target": "obstacle:0"}]},
    {"goal": GOAL, "disturbances": [{"start": 0, "duration": 1, "target": "right", "force": [1, 0, 0]},
                                    {"start": 0.5, "duration": 1, "target": "right", "force": [1, 0, 0]}]},
    {"sine": {"amplitude": [0.1] * 6, "period": -1}},
    {"goal": GOAL, "wholebody": {"no_such_field": 1}},
    {"goal": GOAL, "model": "missing.model"},
], ids=lambda d: ",".join(sorted(d)) or "empty")
def test_invalid_documents(doc):
    with pytest.raises(ScenarioError):
        scenario_from_dict(doc)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ScenarioError):
        load_document(tmp_path / "nope.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("- just\n- a list\n")
    with pytest.raises(ScenarioError):
        load_document(bad)


def test_overrides_take_precedence():
    sc = load_scenario(SCENARIOS / "table2_sine.yaml",
                       {"planner": "discretized", "wholebody.n_knots": 26, "wholebody.horizon": 3.0})
    assert sc.planner == "discretized"
    assert sc.wholebody.n_knots == 26 and sc.wholebody.horizon == 3.0
    assert not sc.wholebody.admittance
    doc = {"goal": 1}
    with pytest.raises(ScenarioError):
        set_path(doc, "goal.right", [0, 0, 0])
