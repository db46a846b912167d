"""Task-space planner for two cooperating end-effectors.

The decision vector stacks the position control points ``P`` (6 x Np+1,
right palm rows first) and the rotation control points ``Psi`` (6 x Npsi+1,
angle/azimuth/polar per palm), both row-major. Costs and pointwise
constraints are evaluated on ``K+1`` uniform knots over a shrinking horizon.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import ad
from .bezier import bernstein_basis, derivative_control_points, evaluate
from .nlp import (Constraint, CostTerm, NlpProblem, NlpSolution, SolverOptions, assemble, solve,
                  warm_multipliers)
from .rotation import (aligned_difference, psi_to_quaternion, quaternion_distance,
                       quaternion_to_psi, quaternion_to_rotation)


class InfeasibleGoalError(ValueError):
    pass


@dataclass(frozen=True)
class TaskPlanConfig:
    n_ctrl_p: int = 8
    n_ctrl_psi: int = 8
    n_knots: int = 8
    horizon0: float = 10.0
    t_min: float = 1.0
    w_x: float = 10.0
    w_y: float = 10.0
    w_pd: float = 1.0
    w_psid: float = 1.0
    w_pdd: float = 0.1
    w_psidd: float = 0.1
    d_safe: float = 0.3
    margin: float = 0.02
    pd_max: float = 0.5
    pdd_max: float = 1.0
    prediction: str = "hold"  # or "constant_velocity"
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if min(self.n_ctrl_p, self.n_ctrl_psi) < 4:
            raise ValueError("at least 4 control points are needed for terminal rest constraints")
        if self.n_knots < 2:
            raise ValueError("need at least two knots")
        if min(self.w_x, self.w_y, self.w_pd, self.w_psid, self.w_pdd, self.w_psidd) < 0:
            raise ValueError("weights must be non-negative")
        if self.d_safe <= 0:
            raise ValueError("d_safe must be positive")
        if self.prediction not in ("hold", "constant_velocity"):
            raise ValueError(f"unknown prediction policy {self.prediction!r}")

    @property
    def K(self) -> int:
        return self.n_knots - 1

    @property
    def n_decision(self) -> int:
        return 6 * self.n_ctrl_p + 6 * self.n_ctrl_psi


@dataclass(frozen=True)
class Obstacle:
    center: np.ndarray
    radius: float = 0.0
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def predict(self, dt, policy: str = "hold") -> np.ndarray:
        dt = np.asarray(dt, dtype=float)
        c = np.asarray(self.center, dtype=float)
        if policy == "constant_velocity":
            return c + dt[..., None] * np.asarray(self.velocity, dtype=float)
        return np.broadcast_to(c, dt.shape + (3,))


@dataclass(frozen=True)
class TaskGoal:
    p_goal: np.ndarray  # (6,) right then left
    theta_goal: np.ndarray  # (2, 4)

    def __post_init__(self):
        p = np.asarray(self.p_goal, dtype=float)
        th = np.asarray(self.theta_goal, dtype=float)
        if p.shape != (6,) or th.shape != (2, 4):
            raise ValueError("goal needs a 6-vector of positions and a (2, 4) quaternion pair")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(th))):
            raise ValueError("goal must be finite")
        if np.allclose(p[:3], p[3:]):
            raise ValueError("right and left targets must differ")


@dataclass
class TaskPlan:
    P: np.ndarray
    Psi: np.ndarray
    horizon: float
    t0: float
    converged: bool
    solution: NlpSolution | None = None
    reused: bool = False


def shrink_horizon(T0: float, elapsed: float, T_min: float = 1.0) -> float:
    if elapsed < 0:
        raise ValueError("elapsed time must be non-negative")
    return max(T0 - elapsed, T_min)


def nearest_psi(q, reference=None) -> np.ndarray:
    """Angle/axis coordinates of ``q``, choosing the chart closest to ``reference``.

    Without a reference the principal inverse is returned. Equivalent
    coordinates differ by ``alpha + 2k pi`` (quaternion sign flips, same
    rotation), ``beta + 2m pi``, and the axis reversal
    ``(alpha, beta, gamma) -> (-alpha, beta + pi, pi - gamma)``.
    """
    psi = quaternion_to_psi(q)
    if reference is None:
        return psi
    reference = np.asarray(reference, dtype=float)
    out = np.empty_like(psi)
    for idx in np.ndindex(psi.shape[:-1]):
        a, b, g = psi[idx]
        ra, rb, rg = reference[idx]
        best, best_d = None, np.inf
        for a0, b0, g0 in ((a, b, g), (-a, b + np.pi, np.pi - g)):
            ka = np.round((ra - a0) / (2 * np.pi))
            kb = np.round((rb - b0) / (2 * np.pi))
            for da in (ka - 1, ka, ka + 1):
                for db in (kb - 1, kb, kb + 1):
                    cand = np.array([a0 + 2 * np.pi * da, b0 + 2 * np.pi * db, g0])
                    d = np.sum((cand - reference[idx]) ** 2)
                    if abs(np.sin(0.5 * a0)) < 1e-8:
                        # zero rotation: axis is free, keep the reference axis
                        cand = np.array([a0 + 2 * np.pi * da, rb, rg])
                        d = np.sum((cand - reference[idx]) ** 2)
                    if d < best_d:
                        best, best_d = cand, d
        out[idx] = best
    return out


class TaskPlanner:
    """Builds and solves the task-space program each control loop."""

    def __init__(self, cfg: TaskPlanConfig | None = None):
        self.cfg = cfg or TaskPlanConfig()
        c = self.cfg
        self.tbars = np.arange(c.n_knots) / c.K
        self.Bp = bernstein_basis(c.n_ctrl_p - 1, self.tbars)  # (K+1, Np+1)
        self.Bpsi = bernstein_basis(c.n_ctrl_psi - 1, self.tbars)
        self.previous: TaskPlan | None = None

    def split(self, x):
        c = self.cfg
        n_p = 6 * c.n_ctrl_p
        return x[:n_p].reshape(6, c.n_ctrl_p), x[n_p:].reshape(6, c.n_ctrl_psi)

    def cold_start(self, p_act, psi_act, p_goal) -> np.ndarray:
        c = self.cfg
        s = np.linspace(0.0, 1.0, c.n_ctrl_p)
        P = p_act[:, None] + (p_goal - p_act)[:, None] * s[None, :]
        Psi = np.repeat(psi_act[:, None], c.n_ctrl_psi, axis=1)
        return np.concatenate([P.ravel(), Psi.ravel()])

    def build_problem(self, p_act, theta_act, goal: TaskGoal, obstacles=(), horizon=None,
                      warm: TaskPlan | None = None) -> NlpProblem:
        c = self.cfg
        T = float(horizon if horizon is not None else c.horizon0)
        p_act = np.asarray(p_act, dtype=float)
        theta_act = np.asarray(theta_act, dtype=float)
        p_goal = np.asarray(goal.p_goal, dtype=float)
        theta_goal = np.asarray(goal.theta_goal, dtype=float)
        knot_dt = self.tbars * T
        obst = [(o.predict(knot_dt, c.prediction), c.d_safe + c.margin + o.radius) for o in obstacles]
        for centers, clearance in obst:
            mid_goal = 0.5 * (p_goal[:3] + p_goal[3:])
            if np.linalg.norm(mid_goal - centers[-1]) < clearance:
                raise InfeasibleGoalError("goal midpoint lies inside an obstacle safety sphere")

        ref_psi = None
        if warm is not None and warm.Psi.shape == (6, c.n_ctrl_psi):
            ref_psi = warm.Psi[:, 0].reshape(2, 3)
        psi_act = nearest_psi(theta_act, ref_psi).ravel()

        if warm is not None and warm.P.shape == (6, c.n_ctrl_p) and warm.Psi.shape == (6, c.n_ctrl_psi):
            x0 = np.concatenate([warm.P.ravel(), warm.Psi.ravel()])
        else:
            x0 = self.cold_start(p_act, psi_act, p_goal)

        n_p = 6 * c.n_ctrl_p
        lb = np.full(c.n_decision, -np.inf)
        ub = np.full(c.n_decision, np.inf)
        # initial state and goal pinned through the bounds; terminal rest of the
        # position curve (zero velocity and acceleration) means the last three
        # control points all equal the goal
        pins = [(0, p_act, 0, c.n_ctrl_p), (n_p, psi_act, 0, c.n_ctrl_psi)]
        pins += [(0, p_goal, c.n_ctrl_p - k, c.n_ctrl_p) for k in (1, 2, 3)]
        for off, vals, col, ncol in pins:
            idx = off + np.arange(6) * ncol + col
            lb[idx] = vals
            ub[idx] = vals

        Bp, Bpsi = self.Bp, self.Bpsi

        def prepare(x):
            P, Psi = self.split(x)
            p = (P @ Bp.T).T  # (K+1, 6)
            psi = (Psi @ Bpsi.T).T
            quat = psi_to_quaternion(psi.reshape(c.n_knots, 2, 3))  # (K+1, 2, 4)
            return {"P": P, "Psi": Psi, "p": p, "quat": quat}

        def palm_alignment(ctx):
            p = ctx["p"]
            axis = p[:, 3:] - p[:, :3]  # (K+1, 3)
            R = quaternion_to_rotation(ctx["quat"])  # (K+1, 2, 3, 3)
            cols = []
            for arm in (0, 1):
                for k in (0, 1):
                    cols.append((R[:, arm, :, k] * axis).sum(axis=-1))
            return ad.stack(cols, axis=-1).ravel()

        align_w = np.tile([c.w_x, c.w_y, c.w_x, c.w_y], c.n_knots)

        def d1(key, T_=T):
            return lambda ctx: derivative_control_points(ctx[key], T_, 1).ravel()

        def d2(key, T_=T):
            return lambda ctx: derivative_control_points(ctx[key], T_, 2).ravel()

        costs = [
            CostTerm("palm_alignment", palm_alignment, align_w),
            CostTerm("smooth_p_vel", d1("P"), c.w_pd),
            CostTerm("smooth_psi_vel", d1("Psi"), c.w_psid),
            CostTerm("smooth_p_acc", d2("P"), c.w_pdd),
            CostTerm("smooth_psi_acc", d2("Psi"), c.w_psidd),
        ]

        def terminal_rest(key):
            def fn(ctx):
                E = ctx[key]
                return ad.concatenate([(E[:, -1] - E[:, -2]),
                                       (E[:, -1] - 2.0 * E[:, -2] + E[:, -3])])
            return fn

        def terminal_orientation(ctx):
            psi_end = ctx["Psi"][:, -1].reshape(2, 3)
            return aligned_difference(psi_to_quaternion(psi_end), theta_goal).ravel()

        constraints = [
            Constraint("terminal_orientation", terminal_orientation, "eq"),
            Constraint("terminal_rest_psi", terminal_rest("Psi"), "eq"),
        ]
        for k, (centers, clearance) in enumerate(obst):
            # knot 0 is pinned to the measured state and carries no decision
            def obstacle(ctx, centers=centers[1:], clearance=clearance):
                p = ctx["p"][1:]
                mid = 0.5 * (p[:, :3] + p[:, 3:])
                diff = mid - centers
                return clearance - ad.sqrt((diff * diff).sum(axis=-1) + 1e-12)
            constraints.append(Constraint(f"obstacle_{k}", obstacle, "ineq"))

        def vel_bounds(ctx):
            Pd = derivative_control_points(ctx["P"], T, 1).ravel()
            return ad.concatenate([Pd - c.pd_max, -c.pd_max - Pd])

        def acc_bounds(ctx):
            Pdd = derivative_control_points(ctx["P"], T, 2).ravel()
            return ad.concatenate([Pdd - c.pdd_max, -c.pdd_max - Pdd])

        constraints += [Constraint("velocity_bounds", vel_bounds, "ineq"),
                        Constraint("acceleration_bounds", acc_bounds, "ineq")]
        return assemble(costs, constraints, bounds=(lb, ub), x0=x0, prepare=prepare)

    def solve_step(self, p_act, theta_act, goal: TaskGoal, obstacles=(), t0: float = 0.0,
                   horizon=None, warm: TaskPlan | None = None, multipliers=None) -> TaskPlan:
        c = self.cfg
        T = float(horizon if horizon is not None else c.horizon0)
        problem = self.build_problem(p_act, theta_act, goal, obstacles, T, warm)
        sol_mult, rho = warm_multipliers(warm)
        sol = solve(problem, c.solver, multipliers=multipliers or sol_mult, penalty=rho)
        P, Psi = self.split(sol.x)
        plan = TaskPlan(P=P.copy(), Psi=Psi.copy(), horizon=T, t0=t0, converged=sol.converged,
                        solution=sol)
        if not sol.converged and warm is not None:
            return replace(warm, converged=False, reused=True, solution=sol)
        return plan


def extract_reference(plan: TaskPlan, t: float):
    """Position (6,) and quaternion pair (2, 4) references at time ``t``."""
    if t < plan.t0 - 1e-12:
        raise ValueError("reference requested before the plan start")
    tbar = min(max((t - plan.t0) / plan.horizon, 0.0), 1.0)
    p = evaluate(plan.P, tbar)
    psi = evaluate(plan.Psi, tbar)
    return p, psi_to_quaternion(psi.reshape(2, 3))


def reference_trajectory(plan: TaskPlan, times):
    """Vectorized :func:`extract_reference` over an array of times."""
    times = np.asarray(times, dtype=float)
    tbar = np.clip((times - plan.t0) / plan.horizon, 0.0, 1.0)
    p = evaluate(plan.P, tbar).T
    psi = evaluate(plan.Psi, tbar).T
    return p, psi_to_quaternion(psi.reshape(len(times), 2, 3))


def orientation_error(theta, theta_goal) -> float:
    return float(np.max(quaternion_distance(theta, theta_goal)))
