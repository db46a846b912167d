import numpy as np
import pytest

from bezier_mpc.baseline import (DiscretizedPlan, DiscretizedPlanner, discretized_decision_count,
                                 extract_commands_discretized)
from bezier_mpc.mpc_wholebody import WholeBodyConfig
from bezier_mpc.robot import BASE_XY, UPPER
from bezier_mpc.simulator import base_consistency, check_wholebody_plan, palms

TOL = 1e-6


def test_decision_counts():
    assert discretized_decision_count(6) == 216
    assert discretized_decision_count(26) == 936
    assert discretized_decision_count(6) == 2 * WholeBodyConfig(admittance=False).n_decision
    assert DiscretizedPlanner(WholeBodyConfig(admittance=False, n_knots=26)).n_decision == 936
    assert discretized_decision_count(6, admittance=True) == 2 * 6 * 24


def test_problem_shape(model):
    cfg = WholeBodyConfig(admittance=False)
    planner = DiscretizedPlanner(cfg, model)
    q = np.zeros(18)
    p, th = palms(model, q)
    prob = planner.build_problem(q, np.tile(p, (6, 1)), np.tile(th, (6, 1, 1)))
    assert prob.n == 216
    assert prob.constraint_sizes()["euler_transition"] == 5 * 18
    np.testing.assert_array_equal(prob.lb[:18], q)
    np.testing.assert_array_equal(prob.ub[:18], q)


def test_solved_plan_invariants(model):
    cfg = WholeBodyConfig(admittance=False)
    planner = DiscretizedPlanner(cfg, model)
    q = np.zeros(18)
    p, th = palms(model, q)
    p_ref = np.tile(p + np.array([0.1, 0.05, 0.0, 0.1, 0.05, 0.0]), (cfg.n_knots, 1))
    plan = planner.solve_step(q, p_ref, np.tile(th, (cfg.n_knots, 1, 1)))
    assert plan.converged
    assert plan.q.shape == plan.qd.shape == (18, cfg.n_knots)
    assert plan.transition_residual() <= cfg.solver.tol_feas
    np.testing.assert_array_equal(plan.q[:, 0], q)
    assert check_wholebody_plan(model, plan, q, [], cfg) <= TOL
    # moved toward the reference
    p_end, _ = palms(model, plan.q[:, -1])
    assert np.linalg.norm(p_end - p_ref[-1]) < np.linalg.norm(p - p_ref[-1])


def test_extract_commands_constant_plan(rng):
    q = rng.normal(size=18)
    plan = DiscretizedPlan(q=np.repeat(q[:, None], 6, axis=1), qd=np.zeros((18, 6)),
                           horizon=1.0, t0=0.0, converged=True)
    cmd = extract_commands_discretized(plan, 0.02, yaw=0.3)
    np.testing.assert_array_equal(cmd.base_velocity_local, np.zeros(3))
    np.testing.assert_allclose(cmd.upper_positions, q[UPPER])
    assert base_consistency(plan, 0.02) == pytest.approx(0.0, abs=1e-15)


def test_extract_commands_interpolates_and_holds(rng):
    q0, q1 = rng.normal(size=18), rng.normal(size=18)
    qk = np.stack([q0 + (q1 - q0) * s for s in np.linspace(0, 1, 6)], axis=1)
    qd = rng.normal(size=(18, 6))
    plan = DiscretizedPlan(q=qk, qd=qd, horizon=1.0, t0=0.0, converged=True)
    cmd = extract_commands_discretized(plan, 0.1, yaw=0.0)
    np.testing.assert_allclose(cmd.upper_positions, (q0 + 0.5 * (qk[:, 1] - q0))[UPPER])
    np.testing.assert_allclose(cmd.base_velocity_local, qd[:3, 0])
    with pytest.raises(ValueError):
        extract_commands_discretized(plan, 1.5, yaw=0.0)


@pytest.mark.parametrize("r", [1e-3, 1e-2, 1e-1])
def test_inconsistency_proportional_to_residual(r):
    # base moves linearly at v; the held velocity knot is off by r
    v = np.array([0.2, -0.1])
    times = np.linspace(0, 1.0, 6)
    q = np.zeros((18, 6))
    q[BASE_XY] = np.outer(v, times)
    qd = np.zeros((18, 6))
    qd[BASE_XY] = v[:, None]
    qd[0, 0] += r
    plan = DiscretizedPlan(q=q, qd=qd, horizon=1.0, t0=0.0, converged=True)
    assert base_consistency(plan, 0.02) == pytest.approx(0.02 * r, rel=1e-9)
    assert plan.transition_residual() == pytest.approx(0.2 * r, rel=1e-9)
