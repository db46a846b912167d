import numpy as np
import pytest

from bezier_mpc.bench import task_mode_counts
from bezier_mpc.mpc_task import (InfeasibleGoalError, Obstacle, TaskGoal, TaskPlanConfig, TaskPlanner,
                                 reference_trajectory)
from bezier_mpc.rotation import axis_angle, multiply, quaternion_distance
from bezier_mpc.simulator import palms
from bezier_mpc.task_modes import DiscretizedTaskPlanner, QuaternionBezierPlanner

TOL = 1e-6


@pytest.fixture(scope="module")
def setup(model):
    p0, th0 = palms(model, np.zeros(18))
    # rotate both palms about the hand-to-hand axis so the alignment cost stays satisfiable
    turn = axis_angle([0.0, 1.0, 0.0], 0.4)
    goal = TaskGoal(p0 + np.tile([0.4, 0.1, 0.05], 2), np.stack([multiply(turn, q) for q in th0]))
    return p0, th0, goal


def test_decision_counts():
    assert task_mode_counts() == {"a_discretized_quaternion": 224, "b_bezier_quaternion": 112,
                                  "c_bezier_angle_axis": 96}
    cfg = TaskPlanConfig(n_knots=11, n_ctrl_p=5, n_ctrl_psi=5)
    assert DiscretizedTaskPlanner(cfg).n_decision == 2 * 11 * 14
    assert QuaternionBezierPlanner(cfg).n_decision == 5 * 14
    assert cfg.n_decision == 5 * 12


@pytest.mark.parametrize("cls", [QuaternionBezierPlanner, DiscretizedTaskPlanner])
def test_solved_mode_meets_boundary_and_knot_norms(cls, setup):
    p0, th0, goal = setup
    planner = cls(TaskPlanConfig())
    plan = planner.solve_step(p0, th0, goal, horizon=6.0)
    assert plan.converged
    p, th = plan.sample(planner.tbars)
    np.testing.assert_allclose(p[0], p0, atol=1e-12)
    np.testing.assert_allclose(p[-1], goal.p_goal, atol=TOL)
    assert np.max(quaternion_distance(th[-1], goal.theta_goal)) <= 1e-5
    norms = np.linalg.norm(th[1:-1], axis=-1)
    assert np.max(np.abs(norms - 1.0)) <= TOL


def test_only_angle_axis_mode_is_unit_everywhere(setup):
    p0, th0, goal = setup
    cfg = TaskPlanConfig()
    tb = np.random.default_rng(3).uniform(0, 1, 1000)

    plan = TaskPlanner(cfg).solve_step(p0, th0, goal, horizon=6.0)
    _, th = reference_trajectory(plan, plan.t0 + tb * plan.horizon)
    assert np.max(np.abs(np.linalg.norm(th, axis=-1) - 1.0)) <= 1e-12

    qplan = QuaternionBezierPlanner(cfg).solve_step(p0, th0, goal, horizon=6.0)
    _, qth = qplan.sample(tb)
    # polynomial quaternion curves leave the unit sphere between knots
    assert np.max(np.abs(np.linalg.norm(qth, axis=-1) - 1.0)) > 1e-9


@pytest.mark.parametrize("cls", [QuaternionBezierPlanner, DiscretizedTaskPlanner])
def test_goal_inside_obstacle_rejected(cls, setup):
    p0, th0, goal = setup
    mid = 0.5 * (goal.p_goal[:3] + goal.p_goal[3:])
    with pytest.raises(InfeasibleGoalError):
        cls(TaskPlanConfig()).build_problem(p0, th0, goal, [Obstacle(mid, 0.05)], horizon=6.0)


def test_obstacle_rows_cover_free_knots(setup):
    p0, th0, goal = setup
    obstacle = Obstacle(np.array([3.0, 3.0, 0.5]), 0.1)
    for cls in (QuaternionBezierPlanner, DiscretizedTaskPlanner):
        prob = cls(TaskPlanConfig()).build_problem(p0, th0, goal, [obstacle], horizon=6.0)
        assert prob.constraint_sizes()["obstacle_0"] == 7
