"""Whole-body planner: joint-space Bezier curve plus an admittance offset.

Decision vector (row-major): ``Q`` (18 x Nq+1) followed, when admittance is
enabled, by ``Pt`` (6 x Np~+1), the palm-frame position offsets of the right
and left palms. Forward kinematics at the knots is differentiated with 18
local seeds per knot and chained to the full decision vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ad
from .bezier import bernstein_basis, derivative_control_points, evaluate
from .nlp import (Constraint, CostTerm, NlpProblem, NlpSolution, SolverOptions, assemble, solve,
                  warm_multipliers)
from .robot import BASE_XY, N_DOF, UPPER, KinematicModel, default_model
from .rotation import aligned_difference, quaternion_to_rotation


@dataclass(frozen=True)
class WholeBodyConfig:
    n_ctrl_q: int = 6
    n_ctrl_pt: int = 6
    n_knots: int = 6
    horizon: float = 2.0
    t_loop: float = 0.02
    w_p: float = 50.0
    w_theta: float = 20.0
    w_f: float = 0.05
    w_u: float = 0.5
    w_qd: float = 0.1
    w_qdd: float = 0.1
    w_ptd: float = 0.1
    w_ptdd: float = 0.1
    stiffness: tuple = (300.0,) * 6
    damping: tuple = (40.0,) * 6
    d_safe: float = 0.3
    margin: float = 0.02
    admittance: bool = True
    match_initial_velocity: bool = False
    prediction: str = "hold"
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if self.n_ctrl_q < 2 or self.n_ctrl_pt < 2:
            raise ValueError("curves need at least two control points")
        if self.n_knots < 2:
            raise ValueError("need at least two knots")
        if not 0.0 < self.t_loop <= self.horizon:
            raise ValueError("t_loop must lie in (0, horizon]")
        if len(self.stiffness) != 6 or len(self.damping) != 6:
            raise ValueError("stiffness and damping need 6 diagonal entries")
        if min(self.stiffness) <= 0 or min(self.damping) < 0:
            raise ValueError("stiffness must be positive and damping non-negative")
        if min(self.w_p, self.w_theta, self.w_f, self.w_u, self.w_qd, self.w_qdd,
               self.w_ptd, self.w_ptdd) < 0:
            raise ValueError("weights must be non-negative")

    @property
    def K(self) -> int:
        return self.n_knots - 1

    @property
    def n_decision(self) -> int:
        return N_DOF * self.n_ctrl_q + (6 * self.n_ctrl_pt if self.admittance else 0)


def admittance_force(F_act, stiffness, damping, p_tilde, pd_tilde):
    """``F_act + K p~ + D p~'`` with diagonal gains (broadcasts over knots)."""
    return F_act + p_tilde * np.asarray(stiffness) + pd_tilde * np.asarray(damping)


@dataclass(frozen=True)
class QuinticProfile:
    """Minimum-jerk blend from ``start_value`` to ``end_value`` over ``duration``."""

    start_value: np.ndarray
    end_value: np.ndarray
    t_start: float = 0.0
    duration: float = 1.0

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    def __call__(self, t):
        s = np.clip((np.asarray(t, dtype=float) - self.t_start) / self.duration, 0.0, 1.0)
        blend = s**3 * (10.0 - 15.0 * s + 6.0 * s**2)
        a = np.asarray(self.start_value, dtype=float)
        b = np.asarray(self.end_value, dtype=float)
        return a + (b - a) * np.asarray(blend)[..., None]


@dataclass
class WholeBodyPlan:
    Q: np.ndarray
    Pt: np.ndarray | None
    horizon: float
    t0: float
    converged: bool
    solution: NlpSolution | None = None


@dataclass(frozen=True)
class Commands:
    upper_positions: np.ndarray  # (15,)
    base_velocity_local: np.ndarray  # (vx, vy, wz) in the base frame


class WholeBodyPlanner:
    def __init__(self, cfg: WholeBodyConfig | None = None, model: KinematicModel | None = None):
        self.cfg = cfg or WholeBodyConfig()
        self.model = model or default_model()
        c = self.cfg
        self.tbars = np.arange(c.n_knots) / c.K
        self.Bq = bernstein_basis(c.n_ctrl_q - 1, self.tbars)
        self.Bqd = bernstein_basis(c.n_ctrl_q - 2, self.tbars)
        self.Bpt = bernstein_basis(c.n_ctrl_pt - 1, self.tbars)
        self.Bptd = bernstein_basis(c.n_ctrl_pt - 2, self.tbars)

    def split(self, x):
        c = self.cfg
        nq = N_DOF * c.n_ctrl_q
        Q = x[:nq].reshape(N_DOF, c.n_ctrl_q)
        Pt = x[nq:].reshape(6, c.n_ctrl_pt) if c.admittance else None
        return Q, Pt

    def knot_times(self, t0: float) -> np.ndarray:
        return t0 + self.tbars * self.cfg.horizon

    def _fk(self, q, with_rotation: bool = False):
        """Palm positions (K+1, 6), quaternions (K+1, 2, 4) and optionally rotations (K+1, 2, 3, 3).

        Dual input is handled with the model's geometric Jacobian, then chained
        to the decision vector.
        """
        if ad.is_dual(q):
            fr = self.model.frames_jacobian(q.val)
            (pr, qr, Jpr, Jqr), (pl, ql, Jpl, Jql) = fr["right"], fr["left"]
            p = ad.Dual(np.concatenate([pr, pl], axis=-1), np.concatenate([Jpr, Jpl], axis=-2)).chain(q)
            th_local = ad.Dual(np.stack([qr, ql], axis=-2), np.stack([Jqr, Jql], axis=-3))
            out = (p, th_local.chain(q))
            if with_rotation:
                out += (quaternion_to_rotation(th_local).chain(q),)
            return out
        fr = self.model.frames(q)
        th = np.stack([fr["right"][1], fr["left"][1]], axis=-2)
        out = (np.concatenate([fr["right"][0], fr["left"][0]], axis=-1), th)
        if with_rotation:
            out += (quaternion_to_rotation(th),)
        return out

    def build_problem(self, q_act, p_ref, theta_ref, F_act=None, F_ref=None, obstacles=(),
                      qd_act=None, warm: WholeBodyPlan | None = None) -> NlpProblem:
        """``p_ref`` (K+1, 6), ``theta_ref`` (K+1, 2, 4), ``F_ref`` (K+1, 6) sampled at the knots."""
        c = self.cfg
        m = self.model
        T = c.horizon
        q_act = np.asarray(q_act, dtype=float)
        if q_act.shape != (N_DOF,):
            raise ValueError(f"q_act must have shape ({N_DOF},)")
        p_ref = np.asarray(p_ref, dtype=float).reshape(c.n_knots, 6)
        theta_ref = np.asarray(theta_ref, dtype=float).reshape(c.n_knots, 2, 4)
        F_act = np.zeros(6) if F_act is None else np.asarray(F_act, dtype=float)
        F_ref = np.zeros((c.n_knots, 6)) if F_ref is None else \
            np.broadcast_to(np.asarray(F_ref, dtype=float), (c.n_knots, 6))
        q0 = np.clip(q_act, m.q_min, m.q_max)

        nq = N_DOF * c.n_ctrl_q
        lb = np.full(c.n_decision, -np.inf)
        ub = np.full(c.n_decision, np.inf)
        lb[:nq] = np.repeat(m.q_min, c.n_ctrl_q)
        ub[:nq] = np.repeat(m.q_max, c.n_ctrl_q)
        idx0 = np.arange(N_DOF) * c.n_ctrl_q
        lb[idx0] = q0
        ub[idx0] = q0
        if c.admittance:
            idx_pt0 = nq + np.arange(6) * c.n_ctrl_pt
            lb[idx_pt0] = 0.0
            ub[idx_pt0] = 0.0

        if warm is not None and warm.Q.shape == (N_DOF, c.n_ctrl_q):
            Q0 = warm.Q.copy()
            Pt0 = warm.Pt if (warm.Pt is not None and c.admittance) else np.zeros((6, c.n_ctrl_pt))
        else:
            Q0 = np.repeat(q0[:, None], c.n_ctrl_q, axis=1)
            Pt0 = np.zeros((6, c.n_ctrl_pt))
        x0 = np.concatenate([Q0.ravel(), Pt0.ravel()]) if c.admittance else Q0.ravel()

        knot_dt = self.tbars * T
        # base control point j is checked against the center predicted at its Greville time j/N T
        cp_dt = np.arange(c.n_ctrl_q) / (c.n_ctrl_q - 1) * T
        obst = [(o.predict(knot_dt, c.prediction), o.predict(cp_dt, c.prediction)[:, :2],
                 c.d_safe + c.margin + o.radius) for o in obstacles]
        Kd = np.asarray(c.stiffness)
        Dd = np.asarray(c.damping)
        Bq, Bpt, Bptd = self.Bq, self.Bpt, self.Bptd

        def prepare(x):
            Q, Pt = self.split(x)
            q = (Q @ Bq.T).T  # (K+1, 18)
            if Pt is None:
                p, th = self._fk(q)
                ctx = {"Q": Q, "Pt": Pt, "p": p, "theta": th}
            else:
                p, th, R = self._fk(q, with_rotation=True)
                ctx = {"Q": Q, "Pt": Pt, "p": p, "theta": th, "R": R}
                ctx["pt"] = (Pt @ Bpt.T).T  # (K+1, 6)
                ctx["ptd"] = (derivative_control_points(Pt, T, 1) @ Bptd.T).T
            return ctx

        def position(ctx):
            err = ctx["p"] - p_ref
            if ctx["Pt"] is None:
                return err.ravel()
            R = ctx["R"]  # (K+1, 2, 3, 3)
            pt = ctx["pt"].reshape(c.n_knots, 2, 1, 3)
            offset = (R * pt).sum(axis=-1).reshape(c.n_knots, 6)
            return (err - offset).ravel()

        def orientation(ctx):
            return aligned_difference(ctx["theta"], theta_ref).ravel()

        def force(ctx):
            return (admittance_force(F_act, Kd, Dd, ctx["pt"], ctx["ptd"]) - F_ref).ravel()

        def upper(ctx):
            return ctx["Q"][UPPER, :].ravel()

        def smooth(key, order):
            return lambda ctx: derivative_control_points(ctx[key], T, order).ravel()

        costs = [
            CostTerm("position_tracking", position, c.w_p),
            CostTerm("orientation_tracking", orientation, c.w_theta),
            CostTerm("upper_body", upper, c.w_u),
            CostTerm("smooth_q_vel", smooth("Q", 1), c.w_qd),
            CostTerm("smooth_q_acc", smooth("Q", 2), c.w_qdd),
        ]
        if c.admittance:
            costs += [CostTerm("force_tracking", force, c.w_f),
                      CostTerm("smooth_pt_vel", smooth("Pt", 1), c.w_ptd),
                      CostTerm("smooth_pt_acc", smooth("Pt", 2), c.w_ptdd)]

        def velocity(ctx):
            Qd = derivative_control_points(ctx["Q"], T, 1)  # (18, Nq)
            return ad.concatenate([(Qd - m.qd_max[:, None]).ravel(),
                                   (m.qd_min[:, None] - Qd).ravel()])

        constraints = [Constraint("joint_velocity", velocity, "ineq")]
        if c.match_initial_velocity:
            qd0 = np.zeros(N_DOF) if qd_act is None else np.asarray(qd_act, dtype=float)
            constraints.append(Constraint(
                "initial_velocity",
                lambda ctx: derivative_control_points(ctx["Q"], T, 1)[:, 0] - qd0, "eq"))
        for k, (centers, base_centers, clearance) in enumerate(obst):
            # knot 0 and Q_0 are pinned to the measured state
            def mid_obstacle(ctx, centers=centers[1:], clearance=clearance):
                p = ctx["p"][1:]
                diff = 0.5 * (p[:, :3] + p[:, 3:]) - centers
                return clearance - ad.sqrt((diff * diff).sum(axis=-1) + 1e-12)

            def base_obstacle(ctx, centers=base_centers[1:].T, clearance=clearance):
                diff = ctx["Q"][BASE_XY, 1:] - centers
                return clearance - ad.sqrt((diff * diff).sum(axis=0) + 1e-12)

            constraints += [Constraint(f"midpoint_obstacle_{k}", mid_obstacle, "ineq"),
                            Constraint(f"base_obstacle_{k}", base_obstacle, "ineq")]
        return assemble(costs, constraints, bounds=(lb, ub), x0=x0, prepare=prepare)

    def solve_step(self, q_act, p_ref, theta_ref, F_act=None, F_ref=None, obstacles=(),
                   qd_act=None, t0: float = 0.0, warm: WholeBodyPlan | None = None) -> WholeBodyPlan:
        problem = self.build_problem(q_act, p_ref, theta_ref, F_act, F_ref, obstacles, qd_act, warm)
        mult, rho = warm_multipliers(warm)
        sol = solve(problem, self.cfg.solver, multipliers=mult, penalty=rho)
        Q, Pt = self.split(sol.x)
        return WholeBodyPlan(Q=Q.copy(), Pt=None if Pt is None else Pt.copy(),
                             horizon=self.cfg.horizon, t0=t0, converged=sol.converged, solution=sol)


def extract_commands(plan: WholeBodyPlan, t_loop: float, yaw: float) -> Commands:
    """Upper-body positions and local-frame base velocity at ``t_loop`` into the plan."""
    tbar = t_loop / plan.horizon
    if not 0.0 <= tbar <= 1.0:
        raise ValueError("t_loop must lie within the plan horizon")
    q = evaluate(plan.Q, tbar)
    qd = evaluate(derivative_control_points(plan.Q, plan.horizon, 1), tbar)
    return Commands(upper_positions=q[UPPER].copy(),
                    base_velocity_local=world_to_local(qd[:3], yaw))


def world_to_local(v_world, yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    vx, vy, wz = v_world
    return np.array([c * vx + s * vy, -s * vx + c * vy, wz])


def local_to_world(v_local, yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    vx, vy, wz = v_local
    return np.array([c * vx - s * vy, s * vx + c * vy, wz])


def sample_at_knots(fn, times) -> np.ndarray:
    return np.stack([np.asarray(fn(t), dtype=float) for t in times])

