"""Discretized whole-body MPC with an explicit Euler state transition.

Decision vector (row-major): joint positions ``q`` at ``K+1`` knots
followed by joint velocities ``qd`` at the same knots, giving
``2 (K+1) * 18`` variables. With admittance enabled the palm offsets
``pt`` and their rates ``ptd`` follow, discretized the same way. Limits
hold at the knots only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ad
from .mpc_wholebody import (Commands, WholeBodyConfig, WholeBodyPlanner, admittance_force,
                            world_to_local)
from .nlp import Constraint, CostTerm, NlpProblem, NlpSolution, assemble, solve, warm_multipliers
from .robot import BASE_XY, N_DOF, UPPER, KinematicModel
from .rotation import aligned_difference


def discretized_decision_count(n_knots: int, n_dof: int = N_DOF, admittance: bool = False) -> int:
    return 2 * n_knots * (n_dof + (6 if admittance else 0))


@dataclass
class DiscretizedPlan:
    q: np.ndarray  # (18, K+1)
    qd: np.ndarray  # (18, K+1)
    horizon: float
    t0: float
    converged: bool
    solution: NlpSolution | None = None
    pt: np.ndarray | None = None  # (6, K+1)
    ptd: np.ndarray | None = None

    @property
    def dt(self) -> float:
        return self.horizon / (self.q.shape[1] - 1)

    def transition_residual(self) -> float:
        r = self.q[:, 1:] - self.q[:, :-1] - self.dt * self.qd[:, :-1]
        return float(np.max(np.abs(r))) if r.size else 0.0


class DiscretizedPlanner(WholeBodyPlanner):
    """Same costs and limits as :class:`WholeBodyPlanner`, sampled at knots."""

    def __init__(self, cfg: WholeBodyConfig | None = None, model: KinematicModel | None = None):
        super().__init__(cfg or WholeBodyConfig(admittance=False), model)

    @property
    def n_decision(self) -> int:
        return discretized_decision_count(self.cfg.n_knots, admittance=self.cfg.admittance)

    def split(self, x):
        k1 = self.cfg.n_knots
        nq = k1 * N_DOF
        parts = [x[:nq].reshape(k1, N_DOF), x[nq:2 * nq].reshape(k1, N_DOF)]
        if self.cfg.admittance:
            parts += [x[2 * nq:2 * nq + 6 * k1].reshape(k1, 6), x[2 * nq + 6 * k1:].reshape(k1, 6)]
        else:
            parts += [None, None]
        return parts

    def build_problem(self, q_act, p_ref, theta_ref, F_act=None, F_ref=None, obstacles=(),
                      qd_act=None, warm: DiscretizedPlan | None = None) -> NlpProblem:
        c = self.cfg
        m = self.model
        k1 = c.n_knots
        dt = c.horizon / c.K
        q_act = np.asarray(q_act, dtype=float)
        if q_act.shape != (N_DOF,):
            raise ValueError(f"q_act must have shape ({N_DOF},)")
        p_ref = np.asarray(p_ref, dtype=float).reshape(k1, 6)
        theta_ref = np.asarray(theta_ref, dtype=float).reshape(k1, 2, 4)
        q0 = np.clip(q_act, m.q_min, m.q_max)

        nq = k1 * N_DOF
        F_act = np.zeros(6) if F_act is None else np.asarray(F_act, dtype=float)
        F_ref = np.zeros((k1, 6)) if F_ref is None else np.broadcast_to(np.asarray(F_ref, dtype=float), (k1, 6))
        lb = np.concatenate([np.tile(m.q_min, k1), np.tile(m.qd_min, k1)])
        ub = np.concatenate([np.tile(m.q_max, k1), np.tile(m.qd_max, k1)])
        lb[:N_DOF] = q0
        ub[:N_DOF] = q0
        if c.admittance:
            n_pt = 12 * k1
            lb = np.concatenate([lb, np.full(n_pt, -np.inf)])
            ub = np.concatenate([ub, np.full(n_pt, np.inf)])
            lb[2 * nq:2 * nq + 6] = 0.0
            ub[2 * nq:2 * nq + 6] = 0.0

        if warm is not None and warm.q.shape == (N_DOF, k1):
            parts = [warm.q.T.ravel(), warm.qd.T.ravel()]
            if c.admittance:
                parts += [np.zeros(6 * k1) if warm.pt is None else warm.pt.T.ravel(),
                          np.zeros(6 * k1) if warm.ptd is None else warm.ptd.T.ravel()]
        else:
            parts = [np.tile(q0, k1), np.zeros(nq)] + ([np.zeros(12 * k1)] if c.admittance else [])
        x0 = np.concatenate(parts)
        Kd, Dd = np.asarray(c.stiffness), np.asarray(c.damping)

        obst = [(o.predict(self.tbars * c.horizon, c.prediction), c.d_safe + c.margin + o.radius)
                for o in obstacles]

        def prepare(x):
            q, qd, pt, ptd = self.split(x)
            if pt is None:
                p, th = self._fk(q)
                return {"q": q, "qd": qd, "p": p, "theta": th}
            p, th, R = self._fk(q, with_rotation=True)
            return {"q": q, "qd": qd, "p": p, "theta": th, "R": R, "pt": pt, "ptd": ptd}

        def position(ctx):
            err = ctx["p"] - p_ref
            if "pt" not in ctx:
                return err.ravel()
            offset = (ctx["R"] * ctx["pt"].reshape(k1, 2, 1, 3)).sum(axis=-1).reshape(k1, 6)
            return (err - offset).ravel()

        costs = [
            CostTerm("position_tracking", position, c.w_p),
            CostTerm("orientation_tracking",
                     lambda ctx: aligned_difference(ctx["theta"], theta_ref).ravel(), c.w_theta),
            CostTerm("upper_body", lambda ctx: ctx["q"][:, UPPER].ravel(), c.w_u),
            CostTerm("smooth_q_vel", lambda ctx: ctx["qd"].ravel(), c.w_qd),
            CostTerm("smooth_q_acc", lambda ctx: ((ctx["qd"][1:] - ctx["qd"][:-1]) / dt).ravel(),
                     c.w_qdd),
        ]
        if c.admittance:
            costs += [
                CostTerm("force_tracking", lambda ctx: (admittance_force(
                    F_act, Kd, Dd, ctx["pt"], ctx["ptd"]) - F_ref).ravel(), c.w_f),
                CostTerm("smooth_pt_vel", lambda ctx: ctx["ptd"].ravel(), c.w_ptd),
                CostTerm("smooth_pt_acc", lambda ctx: ((ctx["ptd"][1:] - ctx["ptd"][:-1]) / dt).ravel(),
                         c.w_ptdd),
            ]

        def transition(ctx):
            q, qd = ctx["q"], ctx["qd"]
            return (q[1:] - q[:-1] - dt * qd[:-1]).ravel()

        constraints = [Constraint("euler_transition", transition, "eq")]
        if c.admittance:
            constraints.append(Constraint(
                "euler_transition_pt",
                lambda ctx: (ctx["pt"][1:] - ctx["pt"][:-1] - dt * ctx["ptd"][:-1]).ravel(), "eq"))
        for k, (centers, clearance) in enumerate(obst):
            def mid_obstacle(ctx, centers=centers[1:], clearance=clearance):
                p = ctx["p"][1:]
                diff = 0.5 * (p[:, :3] + p[:, 3:]) - centers
                return clearance - ad.sqrt((diff * diff).sum(axis=-1) + 1e-12)

            def base_obstacle(ctx, centers=centers[1:], clearance=clearance):
                diff = ctx["q"][1:, BASE_XY] - centers[:, :2]
                return clearance - ad.sqrt((diff * diff).sum(axis=-1) + 1e-12)

            constraints += [Constraint(f"midpoint_obstacle_{k}", mid_obstacle, "ineq"),
                            Constraint(f"base_obstacle_{k}", base_obstacle, "ineq")]
        return assemble(costs, constraints, bounds=(lb, ub), x0=x0, prepare=prepare)

    def solve_step(self, q_act, p_ref, theta_ref, F_act=None, F_ref=None, obstacles=(),
                   qd_act=None, t0: float = 0.0, warm: DiscretizedPlan | None = None) -> DiscretizedPlan:
        problem = self.build_problem(q_act, p_ref, theta_ref, F_act, F_ref, obstacles, qd_act, warm)
        mult, rho = warm_multipliers(warm)
        sol = solve(problem, self.cfg.solver, multipliers=mult, penalty=rho)
        q, qd, pt, ptd = self.split(sol.x)
        return DiscretizedPlan(q=q.T.copy(), qd=qd.T.copy(), horizon=self.cfg.horizon, t0=t0,
                               converged=sol.converged, solution=sol,
                               pt=None if pt is None else pt.T.copy(),
                               ptd=None if ptd is None else ptd.T.copy())


def extract_commands_discretized(plan: DiscretizedPlan, t_loop: float, yaw: float) -> Commands:
    """Linear interpolation of positions, zero-order hold of the base velocity."""
    if t_loop > plan.horizon + 1e-12 or t_loop < 0:
        raise ValueError("t_loop must lie within the plan horizon")
    dt = plan.dt
    i = min(int(t_loop // dt), plan.q.shape[1] - 2)
    s = (t_loop - i * dt) / dt
    q = (1.0 - s) * plan.q[:, i] + s * plan.q[:, i + 1]
    return Commands(upper_positions=q[UPPER].copy(),
                    base_velocity_local=world_to_local(plan.qd[:3, 0], yaw))
