"""Kinematic closed-loop environment and the per-loop planning sequence.

Each loop reads the robot state, solves the task planner (or samples a
scripted reference), solves the whole-body planner, extracts commands and
advances the world by one control period. Clearances are measured by a
separate homogeneous-transform kinematics routine, not by the planners'
constraint code.

Force convention: ``F_act`` is the pressing force the palm applies to its
surroundings, in the palm frame. Object contact therefore contributes
``+k * depth`` along the palm normal, and an external push ``f`` on the palm
contributes ``-f``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .baseline import DiscretizedPlan, DiscretizedPlanner, extract_commands_discretized
from .bezier import derivative_control_points, evaluate
from .mpc_task import (InfeasibleGoalError, Obstacle, TaskGoal, TaskPlanner, reference_trajectory,
                       shrink_horizon)
from .mpc_wholebody import (Commands, QuinticProfile, WholeBodyPlan, WholeBodyPlanner,
                            admittance_force, extract_commands, local_to_world)
from .robot import BASE_XY, N_DOF, UPPER, YAW, KinematicModel
from .rotation import quaternion_distance, quaternion_to_rotation
from .scenario import DisturbanceEvent, ObjectConfig, ScenarioConfig

log = logging.getLogger(__name__)

SERVO_TAU = 0.05


@dataclass(frozen=True)
class WorldState:
    t: float
    q: np.ndarray
    qd: np.ndarray
    F_act: np.ndarray
    obstacles: tuple = ()
    object: ObjectConfig | None = None


# -- independent kinematics --------------------------------------------------

def _axis_angle_matrix(axis, angle):
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array([[c + x * x * C, x * y * C - z * s, x * z * C + y * s],
                     [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
                     [z * x * C - y * s, z * y * C + x * s, c + z * z * C]])


def transform_fk(model: KinematicModel, q) -> dict:
    """Palm (position, rotation matrix) via 4x4 homogeneous transforms."""
    q = np.asarray(q, dtype=float)
    T = {"world": np.eye(4)}
    pending = list(range(model.n_dof))
    while pending:
        rest = []
        for i in pending:
            j = model.joints[i]
            if j.parent not in T:
                rest.append(i)
                continue
            A = np.eye(4)
            A[:3, :3] = quaternion_to_rotation(j.fixed_rotation)
            A[:3, 3] = j.offset
            M = np.eye(4)
            if j.kind == "revolute":
                M[:3, :3] = _axis_angle_matrix(j.axis, q[i])
            else:
                M[:3, 3] = j.axis * q[i]
            T[j.name] = T[j.parent] @ A @ M
        if len(rest) == len(pending):
            raise ValueError("kinematic tree is disconnected")
        pending = rest
    out = {}
    for side, f in model.end_effectors.items():
        A = np.eye(4)
        A[:3, :3] = quaternion_to_rotation(f.fixed_rotation)
        A[:3, 3] = f.offset
        W = T[f.parent] @ A
        out[side] = (W[:3, 3].copy(), W[:3, :3].copy())
    return out


def clearances(model: KinematicModel, q, obstacles) -> tuple[float, float]:
    """Smallest (midpoint, base) center distance minus radius over all obstacles."""
    if not obstacles:
        return np.inf, np.inf
    fr = transform_fk(model, q)
    mid = 0.5 * (fr["right"][0] + fr["left"][0])
    d_mid = min(np.linalg.norm(mid - o.center) - o.radius for o in obstacles)
    d_base = min(np.linalg.norm(q[BASE_XY] - o.center[:2]) - o.radius for o in obstacles)
    return float(d_mid), float(d_base)


# -- world stepping -----------------------------------------------------------

def contact_wrench(model: KinematicModel, q, obj: ObjectConfig | None, pushes=()) -> np.ndarray:
    """Palm-frame pressing forces (right xyz, left xyz)."""
    fr = transform_fk(model, q)
    F = np.zeros(6)
    for k, side in enumerate(("right", "left")):
        p, R = fr[side]
        f_world = np.zeros(3)
        if obj is not None and obj.stiffness > 0:
            y = obj.axis
            x = np.array([np.cos(obj.yaw), np.sin(obj.yaw), 0.0])
            rel = p - obj.center
            inward = 1.0 if side == "right" else -1.0
            depth = inward * (rel @ y) + 0.5 * obj.width
            within = abs(rel @ x) <= obj.half_extent[0] and abs(rel[2]) <= obj.half_extent[1]
            if within and 0.0 < depth < obj.width:
                normal = R[:, 2]
                # spring acts along the face normal; report the palm-normal component
                push_dir = inward * y
                f_world += obj.stiffness * depth * (push_dir @ normal) * normal
        for side_p, f in pushes:
            if side_p == side:
                f_world -= f
        F[3 * k:3 * k + 3] = R.T @ f_world
    return F


def integrate_base(base, v_local, dt):
    """Exact pose update for a constant local-frame twist over ``dt``."""
    x, y, yaw = base
    vx, vy, w = v_local
    # half-angle form of the arc integral, free of cancellation as w -> 0
    mid = yaw + 0.5 * w * dt
    chord = dt * np.sinc(0.5 * w * dt / np.pi)
    ic, is_ = chord * np.cos(mid), chord * np.sin(mid)
    y1 = yaw + w * dt
    return np.array([x + vx * ic - vy * is_, y + vx * is_ + vy * ic, y1])


def step(world: WorldState, commands: Commands, t_loop: float, model: KinematicModel,
         disturbances=()) -> WorldState:
    upper = np.asarray(commands.upper_positions, dtype=float)
    vb = np.asarray(commands.base_velocity_local, dtype=float)
    if upper.shape != (N_DOF - 3,) or vb.shape != (3,):
        raise ValueError("commands need 15 upper-body positions and a 3-vector base velocity")
    q = world.q.copy()
    vb = np.clip(vb, model.qd_min[:3], model.qd_max[:3])
    q[:3] = integrate_base(q[:3], vb, t_loop)
    gain = 1.0 - np.exp(-t_loop / SERVO_TAU)
    dq = np.clip(gain * (upper - q[UPPER]), model.qd_min[UPPER] * t_loop, model.qd_max[UPPER] * t_loop)
    q[UPPER] = np.clip(q[UPPER] + dq, model.q_min[UPPER], model.q_max[UPPER])
    t_new = world.t + t_loop

    obstacles = []
    for k, o in enumerate(world.obstacles):
        v = o.velocity
        for ev in disturbances:
            if ev.target == f"obstacle:{k}" and ev.velocity is not None and ev.active(world.t):
                v = ev.velocity
        obstacles.append(Obstacle(center=o.center + v * t_loop, radius=o.radius, velocity=o.velocity))
    pushes = [(ev.target, ev.force) for ev in disturbances
              if ev.target in ("right", "left") and ev.force is not None and ev.active(t_new)]
    F = contact_wrench(model, q, world.object, pushes)
    return WorldState(t=t_new, q=q, qd=(q - world.q) / t_loop, F_act=F, obstacles=tuple(obstacles),
                      object=world.object)


# -- closed loop -----------------------------------------------------------------

@dataclass
class RunTrace:
    scenario: str
    rows: list = field(default_factory=list)
    outcome: str = "running"
    summary: dict = field(default_factory=dict)
    task_paths: list = field(default_factory=list)  # (t, (M, 6) sampled plan) snapshots


def palms(model, q):
    fr = model.frames(np.asarray(q, dtype=float))
    return (np.concatenate([fr["right"][0], fr["left"][0]]),
            np.stack([fr["right"][1], fr["left"][1]]))


def sine_reference(p_start, sc):
    amp = sc.sine.amplitude
    w = 2.0 * np.pi / sc.sine.period

    def ref(times):
        times = np.atleast_1d(np.asarray(times, dtype=float))
        return p_start + np.sin(w * times)[:, None] * amp
    return ref


def base_consistency(plan, t_loop: float) -> float:
    """Gap between the integrated base-velocity command and the base position curve."""
    if isinstance(plan, DiscretizedPlan):
        times = np.arange(plan.q.shape[1]) * plan.dt
        curve = CubicSpline(times, plan.q[BASE_XY].T, axis=0)
        moved = curve(t_loop) - curve(0.0)
        return float(np.linalg.norm(t_loop * plan.qd[BASE_XY, 0] - moved))
    tbar = t_loop / plan.horizon
    Qb = plan.Q[BASE_XY]
    v = evaluate(derivative_control_points(Qb, plan.horizon, 1), tbar)
    moved = evaluate(Qb, tbar) - Qb[:, 0]
    return float(np.linalg.norm(t_loop * v - moved))


def check_wholebody_plan(model, plan, q_act, obstacles, cfg) -> float:
    """Largest constraint violation of a plan, recomputed from its control points."""
    viol = 0.0
    if isinstance(plan, DiscretizedPlan):
        qk = plan.q.T
        viol = max(viol, plan.transition_residual())
        viol = max(viol, float(np.max(np.abs(plan.q[:, 0] - q_act))))
        qd_pts = plan.qd
        base_pts = plan.q[BASE_XY].T
    else:
        tb = np.arange(cfg.n_knots) / cfg.K
        qk = evaluate(plan.Q, tb).T
        viol = max(viol, float(np.max(np.abs(plan.Q[:, 0] - q_act))))
        qd_pts = derivative_control_points(plan.Q, plan.horizon, 1)
        base_pts = plan.Q[BASE_XY].T
        if plan.Pt is not None:
            viol = max(viol, float(np.max(np.abs(plan.Pt[:, 0]))))
    pts = qk.T if isinstance(plan, DiscretizedPlan) else plan.Q
    viol = max(viol, float(np.max(model.q_min[:, None] - pts)), float(np.max(pts - model.q_max[:, None])))
    viol = max(viol, float(np.max(qd_pts - model.qd_max[:, None])),
               float(np.max(model.qd_min[:, None] - qd_pts)))
    times = np.arange(cfg.n_knots) / cfg.K * cfg.horizon
    for o in obstacles:
        need = cfg.d_safe + cfg.margin + o.radius
        centers = o.predict(times, cfg.prediction)
        for i, qi in enumerate(qk[1:], start=1):
            fr = transform_fk(model, qi)
            mid = 0.5 * (fr["right"][0] + fr["left"][0])
            viol = max(viol, need - float(np.linalg.norm(mid - centers[i])))
        # index 0 is the measured state, which the plan cannot change
        if isinstance(plan, DiscretizedPlan):
            base_centers = centers
        else:
            base_centers = o.predict(np.linspace(0.0, plan.horizon, len(base_pts)), cfg.prediction)
        for bp, c in zip(base_pts[1:], base_centers[1:]):
            viol = max(viol, need - float(np.linalg.norm(bp - c[:2])))
    return max(viol, 0.0)


def check_task_plan(plan, p_act, obstacles, cfg) -> float:
    tb = np.arange(cfg.n_knots) / cfg.K
    p = evaluate(plan.P, tb).T
    viol = float(np.max(np.abs(plan.P[:, 0] - p_act)))
    for o in obstacles:
        centers = o.predict(tb * plan.horizon, cfg.prediction)
        mid = 0.5 * (p[1:, :3] + p[1:, 3:])
        viol = max(viol, float(np.max(cfg.d_safe + cfg.margin + o.radius
                                      - np.linalg.norm(mid - centers[1:], axis=1))))
    Pd = derivative_control_points(plan.P, plan.horizon, 1)
    Pdd = derivative_control_points(plan.P, plan.horizon, 2)
    viol = max(viol, float(np.max(np.abs(Pd))) - cfg.pd_max, float(np.max(np.abs(Pdd))) - cfg.pdd_max)
    return max(viol, 0.0)


def run_closed_loop(sc: ScenarioConfig, max_loops: int | None = None, on_row=None) -> RunTrace:
    model = sc.model
    np.random.default_rng(sc.seed)  # no stochastic elements; seed kept for the record
    wcfg = sc.wholebody
    if sc.planner == "discretized":
        wb = DiscretizedPlanner(wcfg, model)
    else:
        wb = WholeBodyPlanner(wcfg, model)
    tp = TaskPlanner(sc.task) if sc.sine is None else None

    q = sc.start_q.copy()
    world = WorldState(t=0.0, q=q, qd=np.zeros(N_DOF), F_act=np.zeros(6),
                       obstacles=tuple(sc.obstacles), object=sc.object)
    world = replace(world, F_act=contact_wrench(model, q, sc.object))
    p0, th0 = palms(model, q)
    theta_goal = sc.theta_goal if sc.theta_goal is not None else th0
    goal = TaskGoal(sc.p_goal, theta_goal) if sc.p_goal is not None else None
    sine = sine_reference(p0, sc) if sc.sine is not None else None
    fprof = None
    if sc.force_reference is not None:
        fr_ = sc.force_reference
        fprof = QuinticProfile(np.zeros(6), fr_.value, fr_.t_start, fr_.duration)

    trace = RunTrace(scenario=sc.name)
    task_plan = None
    wb_plan = None
    commands = Commands(upper_positions=q[UPPER].copy(), base_velocity_local=np.zeros(3))
    n_loops = int(np.ceil(sc.duration / sc.t_loop - 1e-9))
    if max_loops is not None:
        n_loops = min(n_loops, max_loops)
    outcome = "time_limit"
    safety_floor = sc.d_safe - sc.safety_tolerance
    wall = time.perf_counter()
    for loop in range(n_loops):
        t = world.t
        p_act, th_act = palms(model, world.q)
        if goal is not None and sc.stop_on_goal:
            pos_err = max(np.linalg.norm(p_act[:3] - goal.p_goal[:3]),
                          np.linalg.norm(p_act[3:] - goal.p_goal[3:]))
            ori_err = float(np.max(quaternion_distance(th_act, goal.theta_goal)))
            if pos_err <= sc.tol_position and ori_err <= sc.tol_orientation:
                outcome = "goal_reached"
                break

        knot_times = t + wb.tbars * wcfg.horizon
        t_task = 0.0
        task_conv = True
        task_viol = 0.0
        if tp is not None:
            T = shrink_horizon(sc.task.horizon0, t, sc.task.t_min)
            t0c = time.perf_counter()
            try:
                task_plan = tp.solve_step(p_act, th_act, goal, world.obstacles, t0=t, horizon=T,
                                          warm=task_plan)
                task_conv = task_plan.converged
            except InfeasibleGoalError:
                if task_plan is None:
                    raise
                # an obstacle has moved onto the goal: keep following the last plan
                log.warning("t=%.2f goal blocked by an obstacle; keeping previous task plan", t)
                task_conv = False
            t_task = time.perf_counter() - t0c
            if task_conv:
                task_viol = check_task_plan(task_plan, p_act, world.obstacles, sc.task)
            p_ref_k, th_ref_k = reference_trajectory(task_plan, knot_times)
            if loop % 25 == 0:
                samples = np.linspace(t, t + task_plan.horizon, 40)
                trace.task_paths.append((t, reference_trajectory(task_plan, samples)[0]))
        else:
            p_ref_k = sine(knot_times)
            th_ref_k = np.repeat(th0[None], len(knot_times), axis=0)
        F_ref_k = fprof(knot_times) if fprof is not None else np.zeros((len(knot_times), 6))

        t0c = time.perf_counter()
        new_plan = wb.solve_step(world.q, p_ref_k, th_ref_k, world.F_act, F_ref_k, world.obstacles,
                                 world.qd, t0=t, warm=wb_plan)
        t_wb = time.perf_counter() - t0c
        wb_conv = new_plan.converged
        wb_viol = np.nan
        consistency = np.nan
        F_opt = world.F_act.copy()
        if wb_conv:
            wb_viol = check_wholebody_plan(model, new_plan, world.q, world.obstacles, wcfg)
            if isinstance(new_plan, DiscretizedPlan):
                commands = extract_commands_discretized(new_plan, sc.t_loop, world.q[YAW])
            else:
                commands = extract_commands(new_plan, sc.t_loop, world.q[YAW])
                if new_plan.Pt is not None:
                    tb = sc.t_loop / new_plan.horizon
                    pt = evaluate(new_plan.Pt, tb)
                    ptd = evaluate(derivative_control_points(new_plan.Pt, new_plan.horizon, 1), tb)
                    F_opt = admittance_force(world.F_act, wcfg.stiffness, wcfg.damping, pt, ptd)
            consistency = base_consistency(new_plan, sc.t_loop)
        else:
            log.warning("t=%.2f whole-body solve did not converge (%s); holding previous command",
                        t, new_plan.solution.message if new_plan.solution else "")
        wb_plan = new_plan

        if sine is not None:
            p_ref_now = sine(t)[0]
            th_ref_now = th0
        else:
            p_ref_now, th_ref_now = p_ref_k[0], th_ref_k[0]
        d_mid, d_base = clearances(model, world.q, world.obstacles)
        row = {
            "loop": loop, "t": t, "q": world.q.copy(), "qd": world.qd.copy(),
            "cmd_upper": commands.upper_positions.copy(), "cmd_base": commands.base_velocity_local.copy(),
            "p_act": p_act, "theta_act": th_act.ravel(), "p_ref": p_ref_now, "theta_ref": th_ref_now.ravel(),
            "F_act": world.F_act.copy(), "F_ref": F_ref_k[0], "F_opt": F_opt,
            "clearance_mid": d_mid, "clearance_base": d_base,
            "task_solve_time": t_task, "wb_solve_time": t_wb,
            "task_converged": int(task_conv), "wb_converged": int(wb_conv),
            "task_violation": task_viol, "wb_violation": wb_viol, "consistency": consistency,
        }
        trace.rows.append(row)
        if on_row is not None:
            on_row(row)
        if min(d_mid, d_base) < safety_floor:
            outcome = "safety_violation"
            break
        world = step(world, commands, sc.t_loop, model, sc.disturbances)
        if not np.all(np.isfinite(world.q)):
            outcome = "diverged"
            break
    else:
        if goal is not None and sc.stop_on_goal:
            p_act, th_act = palms(model, world.q)
            pos_err = max(np.linalg.norm(p_act[:3] - goal.p_goal[:3]),
                          np.linalg.norm(p_act[3:] - goal.p_goal[3:]))
            ori_err = float(np.max(quaternion_distance(th_act, goal.theta_goal)))
            if pos_err <= sc.tol_position and ori_err <= sc.tol_orientation:
                outcome = "goal_reached"
    trace.outcome = outcome
    trace.summary = summarize(trace, sc, world, goal, time.perf_counter() - wall)
    return trace


def tracking_error(rows, amplitude=None) -> float:
    """Mean palm position error; divided by the reference peak-to-peak span when given."""
    if not rows:
        return float("nan")
    err = np.array([0.5 * (np.linalg.norm(r["p_act"][:3] - r["p_ref"][:3])
                           + np.linalg.norm(r["p_act"][3:] - r["p_ref"][3:])) for r in rows])
    mean = float(np.mean(err))
    if amplitude is not None:
        mean /= 2.0 * float(np.max(np.abs(amplitude)))
    return mean


def summarize(trace: RunTrace, sc: ScenarioConfig, world: WorldState, goal, wall: float) -> dict:
    rows = trace.rows
    p_act, th_act = palms(sc.model, world.q)

    def stat(key, fn=np.max):
        vals = np.array([r[key] for r in rows], dtype=float)
        vals = vals[np.isfinite(vals)]
        return float(fn(vals)) if vals.size else None

    d_mid, d_base = clearances(sc.model, world.q, world.obstacles)
    mids = [r["clearance_mid"] for r in rows] + [d_mid]
    bases = [r["clearance_base"] for r in rows] + [d_base]
    s = {
        "scenario": sc.name, "planner": sc.planner, "outcome": trace.outcome, "loops": len(rows),
        "sim_time": world.t, "wall_time": wall,
        "min_clearance_mid": float(np.min(mids)) if np.all(np.isfinite(mids)) else None,
        "min_clearance_base": float(np.min(bases)) if np.all(np.isfinite(bases)) else None,
        "d_safe": sc.d_safe,
        "mean_task_solve_time": stat("task_solve_time", np.mean),
        "mean_wb_solve_time": stat("wb_solve_time", np.mean),
        "std_wb_solve_time": stat("wb_solve_time", np.std),
        "task_nonconverged": int(sum(1 - r["task_converged"] for r in rows)),
        "wb_nonconverged": int(sum(1 - r["wb_converged"] for r in rows)),
        "max_task_violation": stat("task_violation"),
        "max_wb_violation": stat("wb_violation"),
        "max_consistency": stat("consistency"),
        "mean_consistency": stat("consistency", np.mean),
        "peak_contact_force": float(max((max(np.linalg.norm(r["F_act"][:3]), np.linalg.norm(r["F_act"][3:]))
                                         for r in rows), default=0.0)),
    }
    if goal is not None:
        s["final_position_error"] = float(max(np.linalg.norm(p_act[:3] - goal.p_goal[:3]),
                                              np.linalg.norm(p_act[3:] - goal.p_goal[3:])))
        s["final_orientation_error"] = float(np.max(quaternion_distance(th_act, goal.theta_goal)))
    if sc.sine is not None:
        s["tracking_error"] = tracking_error(rows, sc.sine.amplitude)
    return s

