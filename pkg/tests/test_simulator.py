import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from bezier_mpc.bezier import bernstein_basis
from bezier_mpc.mpc_task import Obstacle
from bezier_mpc.mpc_wholebody import Commands, WholeBodyConfig, WholeBodyPlan
from bezier_mpc.robot import UPPER
from bezier_mpc.scenario import DisturbanceEvent, ObjectConfig, load_scenario, scenario_from_dict
from bezier_mpc.simulator import (WorldState, base_consistency, check_wholebody_plan, clearances,
                                  contact_wrench, integrate_base, palms, run_closed_loop,
                                  sine_reference, step, tracking_error, transform_fk)

from conftest import SCENARIOS

T_LOOP = 0.02


def world_at(q, **kw):
    return WorldState(t=0.0, q=q, qd=np.zeros(18), F_act=np.zeros(6), **kw)


def hold(q, v=(0.0, 0.0, 0.0)):
    return Commands(upper_positions=q[UPPER].copy(), base_velocity_local=np.array(v, dtype=float))


def test_zero_commands_change_only_time(model, rng):
    q = rng.uniform(-0.3, 0.3, 18)
    w = step(world_at(q), hold(q), T_LOOP, model)
    np.testing.assert_array_equal(w.q, q)
    np.testing.assert_array_equal(w.F_act, np.zeros(6))
    assert w.t == pytest.approx(T_LOOP)


def test_base_velocity_advances_x(model):
    q = np.zeros(18)
    w = step(world_at(q), hold(q, (0.1, 0.0, 0.0)), T_LOOP, model)
    assert w.q[0] == pytest.approx(0.002, abs=1e-15)
    np.testing.assert_array_equal(w.q[1:], q[1:])


def test_command_dimension_mismatch(model):
    q = np.zeros(18)
    with pytest.raises(ValueError):
        step(world_at(q), Commands(np.zeros(14), np.zeros(3)), T_LOOP, model)
    with pytest.raises(ValueError):
        step(world_at(q), Commands(np.zeros(15), np.zeros(2)), T_LOOP, model)


def test_servo_is_rate_limited(model):
    q = np.zeros(18)
    target = np.clip(np.full(15, 2.0), model.q_min[UPPER], model.q_max[UPPER])
    w = step(world_at(q), Commands(target, np.zeros(3)), T_LOOP, model)
    dq = w.q[UPPER] - q[UPPER]
    assert np.all(dq <= model.qd_max[UPPER] * T_LOOP + 1e-15)
    # a small step converges by the first-order gain
    small = q[UPPER] + 1e-4
    w = step(world_at(q), Commands(small, np.zeros(3)), T_LOOP, model)
    np.testing.assert_allclose(w.q[UPPER], 1e-4 * (1 - np.exp(-T_LOOP / 0.05)), rtol=1e-12)


def test_palm_penetration_gives_linear_spring_force(model):
    q = np.zeros(18)
    p, _ = palms(model, q)
    # right palm normal points along +y; place the near face 0.01 m past it
    obj = ObjectConfig(center=np.array([p[0], p[1] + 0.19, p[2]]), width=0.4, stiffness=1000.0)
    F = contact_wrench(model, q, obj)
    np.testing.assert_allclose(F[:3], [0.0, 0.0, 10.0], atol=1e-9)
    np.testing.assert_array_equal(F[3:], np.zeros(3))
    far = ObjectConfig(center=np.array([p[0] + 0.5, p[1] + 0.19, p[2]]), width=0.4, stiffness=1000.0)
    np.testing.assert_array_equal(contact_wrench(model, q, far), np.zeros(6))


def test_push_force_maps_into_palm_frame(model):
    q = np.zeros(18)
    f = np.array([0.0, 0.0, 10.0])
    F = contact_wrench(model, q, None, [("left", f)])
    R = transform_fk(model, q)["left"][1]
    np.testing.assert_allclose(F[3:], -R.T @ f)
    np.testing.assert_array_equal(F[:3], np.zeros(3))


def test_obstacles_advance_and_disturbance_override(model):
    q = np.zeros(18)
    o = Obstacle(np.array([1.0, 0.0, 0.5]), 0.1, np.array([0.1, 0.0, 0.0]))
    w = step(world_at(q, obstacles=(o,)), hold(q), T_LOOP, model)
    np.testing.assert_allclose(w.obstacles[0].center, [1.002, 0.0, 0.5])
    ev = DisturbanceEvent(0.0, 1.0, "obstacle:0", velocity=np.array([0.0, -1.0, 0.0]))
    w = step(world_at(q, obstacles=(o,)), hold(q), T_LOOP, model, [ev])
    np.testing.assert_allclose(w.obstacles[0].center, [1.0, -0.02, 0.5])


@given(st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1), st.floats(-2, 2))
def test_integrate_base_matches_ode(yaw, vx, vy, w):
    def rhs(_, s):
        c, si = np.cos(s[2]), np.sin(s[2])
        return [c * vx - si * vy, si * vx + c * vy, w]
    ref = solve_ivp(rhs, (0.0, 0.5), [0.1, -0.2, yaw], rtol=1e-11, atol=1e-12).y[:, -1]
    np.testing.assert_allclose(integrate_base(np.array([0.1, -0.2, yaw]), (vx, vy, w), 0.5), ref,
                               atol=1e-8)


def test_clearances(model):
    q = np.zeros(18)
    assert clearances(model, q, []) == (np.inf, np.inf)
    p, _ = palms(model, q)
    mid = 0.5 * (p[:3] + p[3:])
    o = Obstacle(mid + np.array([0.5, 0.0, 0.0]), 0.1)
    d_mid, d_base = clearances(model, q, [o])
    assert d_mid == pytest.approx(0.4)
    assert d_base == pytest.approx(np.hypot(*o.center[:2]) - 0.1)


def test_base_consistency_of_bezier_plans():
    cfg = WholeBodyConfig(admittance=False)
    T = cfg.horizon
    # evenly spaced base control points: constant velocity, integrated exactly
    Q = np.zeros((18, cfg.n_ctrl_q))
    Q[0] = np.linspace(0.0, 0.5, cfg.n_ctrl_q)
    plan = WholeBodyPlan(Q=Q, Pt=None, horizon=T, t0=0.0, converged=True)
    assert base_consistency(plan, T_LOOP) == pytest.approx(0.0, abs=1e-15)
    # constant acceleration a: the gap is a t^2 / 2
    a = 0.3
    tb = np.linspace(0, 1, cfg.n_ctrl_q)
    B = bernstein_basis(cfg.n_ctrl_q - 1, tb)
    Q[0] = np.linalg.solve(B, 0.5 * a * (tb * T) ** 2)
    assert base_consistency(plan, T_LOOP) == pytest.approx(0.5 * a * T_LOOP**2, rel=1e-9)


def test_geometric_recheck_flags_violations(model):
    cfg = WholeBodyConfig(admittance=False)
    q = np.zeros(18)
    plan = WholeBodyPlan(Q=np.repeat(q[:, None], cfg.n_ctrl_q, axis=1), Pt=None, horizon=cfg.horizon,
                         t0=0.0, converged=True)
    assert check_wholebody_plan(model, plan, q, [], cfg) == 0.0
    p, _ = palms(model, q)
    mid = 0.5 * (p[:3] + p[3:])
    viol = check_wholebody_plan(model, plan, q, [Obstacle(mid + [0.1, 0, 0], 0.05)], cfg)
    assert viol == pytest.approx(cfg.d_safe + cfg.margin + 0.05 - 0.1)


def test_sine_reference():
    sc = scenario_from_dict({"sine": {"amplitude": [0.2, 0, 0, 0.2, 0, 0], "period": 4.0}})
    ref = sine_reference(np.ones(6), sc)
    np.testing.assert_array_equal(ref(0.0), np.ones((1, 6)))
    np.testing.assert_allclose(ref([1.0, 3.0])[:, 0], [1.2, 0.8])
    np.testing.assert_array_equal(ref(2.5)[0, [1, 2, 4, 5]], np.ones(4))


def test_tracking_error_normalization():
    rows = [{"p_act": np.zeros(6), "p_ref": np.array([0.02, 0, 0, 0.0, 0.02, 0])}] * 3
    assert tracking_error(rows) == pytest.approx(0.02)
    assert tracking_error(rows, np.array([0.1, 0, 0, 0, 0, 0])) == pytest.approx(0.1)
    assert np.isnan(tracking_error([]))


def test_trivial_scenario_reaches_goal_immediately():
    trace = run_closed_loop(load_scenario(SCENARIOS / "trivial.yaml"))
    assert trace.outcome == "goal_reached"
    assert len(trace.rows) <= 2
    assert trace.summary["final_position_error"] <= 1e-2


def test_closed_loop_is_deterministic():
    doc = {"sine": {"amplitude": [0.1, 0, 0, 0.1, 0, 0], "period": 4.0}, "duration": 0.1,
           "obstacles": [{"center": [1.5, 0.0, 0.5], "radius": 0.1}]}
    a = run_closed_loop(scenario_from_dict(doc))
    b = run_closed_loop(scenario_from_dict(doc))
    assert len(a.rows) == len(b.rows) == 5
    skip = {"task_solve_time", "wb_solve_time"}
    for ra, rb in zip(a.rows, b.rows):
        for k in ra:
            if k not in skip:
                np.testing.assert_array_equal(ra[k], rb[k])
    times = [r["t"] for r in a.rows]
    np.testing.assert_allclose(np.diff(times), T_LOOP)


def test_push_deflects_palm_and_recovers():
    doc = {"goal": {"hold": True}, "stop_on_goal": False, "duration": 3.0,
           "task": {"horizon0": 2.0}, "wholebody": {"admittance": True},
           "disturbances": [{"start": 0.2, "duration": 0.6, "target": "right", "force": [0.0, -10.0, 0.0]}]}
    trace = run_closed_loop(scenario_from_dict(doc))
    t = np.array([r["t"] for r in trace.rows])
    p = np.array([r["p_act"][:3] for r in trace.rows])
    along = (p - p[0]) @ np.array([0.0, -1.0, 0.0])
    push = (t >= 0.2) & (t < 0.8)
    peak = along[push].max()
    assert peak > 0.01
    assert abs(along[-1]) < 0.2 * peak
    err = np.array([np.linalg.norm(r["F_opt"] - r["F_ref"]) for r in trace.rows])
    assert err[t >= 0.8].max() < 0.2 * err[push].max()
