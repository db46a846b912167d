"""Alternative task-space formulations used for the rotation-parameterization comparison.

Both keep the costs, boundary conditions, obstacle and motion limits of
:class:`~bezier_mpc.mpc_task.TaskPlanner` and differ only in how orientation
is represented:

* :class:`QuaternionBezierPlanner` puts a Bezier curve directly on the two
  quaternions (``8`` rows of control points, ``(N+1) * 14`` variables) and
  enforces unit norm at the knots only.
* :class:`DiscretizedTaskPlanner` uses knot states ``(p, theta)`` and rates
  ``(pd, thetad)`` linked by explicit Euler steps (``2 (K+1) * 14``
  variables), again with unit norm at the knots.

Between knots neither guarantees a unit quaternion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ad
from .bezier import bernstein_basis, derivative_control_points, evaluate
from .mpc_task import InfeasibleGoalError, TaskGoal, TaskPlanConfig
from .nlp import Constraint, CostTerm, NlpProblem, NlpSolution, assemble, solve, warm_multipliers
from .rotation import aligned_difference, quaternion_to_rotation

N_POS = 6
N_QUAT = 8
N_STATE = N_POS + N_QUAT


def _palm_alignment(p, quat):
    axis = p[:, 3:] - p[:, :3]
    R = quaternion_to_rotation(quat)
    cols = []
    for arm in (0, 1):
        for k in (0, 1):
            cols.append((R[:, arm, :, k] * axis).sum(axis=-1))
    return ad.stack(cols, axis=-1).ravel()


def _unit_norm(quat):
    return ((quat * quat).sum(axis=-1) - 1.0).ravel()


def _obstacles(cfg, tbars, T, obstacles, p_goal):
    obst = [(o.predict(tbars * T, cfg.prediction), cfg.d_safe + cfg.margin + o.radius) for o in obstacles]
    for centers, clearance in obst:
        if np.linalg.norm(0.5 * (p_goal[:3] + p_goal[3:]) - centers[-1]) < clearance:
            raise InfeasibleGoalError("goal midpoint lies inside an obstacle safety sphere")
    constraints = []
    for k, (centers, clearance) in enumerate(obst):
        def fn(ctx, centers=centers[1:], clearance=clearance):
            p = ctx["p"][1:]
            diff = 0.5 * (p[:, :3] + p[:, 3:]) - centers
            return clearance - ad.sqrt((diff * diff).sum(axis=-1) + 1e-12)
        constraints.append(Constraint(f"obstacle_{k}", fn, "ineq"))
    return constraints


@dataclass
class SampledPlan:
    """Any task plan reduced to a callable of normalized time."""

    horizon: float
    t0: float
    converged: bool
    solution: NlpSolution | None
    x: np.ndarray
    sampler: object

    def sample(self, tbar):
        """Positions ``(n, 6)`` and quaternion pairs ``(n, 2, 4)`` at ``tbar``."""
        return self.sampler(np.atleast_1d(np.asarray(tbar, dtype=float)))


class QuaternionBezierPlanner:
    def __init__(self, cfg: TaskPlanConfig | None = None):
        self.cfg = cfg or TaskPlanConfig()
        c = self.cfg
        self.tbars = np.arange(c.n_knots) / c.K
        self.Bp = bernstein_basis(c.n_ctrl_p - 1, self.tbars)
        self.Bq = bernstein_basis(c.n_ctrl_psi - 1, self.tbars)

    @property
    def n_decision(self) -> int:
        return N_POS * self.cfg.n_ctrl_p + N_QUAT * self.cfg.n_ctrl_psi

    def split(self, x):
        c = self.cfg
        n_p = N_POS * c.n_ctrl_p
        return x[:n_p].reshape(N_POS, c.n_ctrl_p), x[n_p:].reshape(N_QUAT, c.n_ctrl_psi)

    def build_problem(self, p_act, theta_act, goal: TaskGoal, obstacles=(), horizon=None,
                      warm: SampledPlan | None = None) -> NlpProblem:
        c = self.cfg
        T = float(horizon if horizon is not None else c.horizon0)
        p_act = np.asarray(p_act, dtype=float)
        theta_act = np.asarray(theta_act, dtype=float).reshape(2, 4)
        p_goal = np.asarray(goal.p_goal, dtype=float)
        theta_goal = np.asarray(goal.theta_goal, dtype=float)
        obstacle_cons = _obstacles(c, self.tbars, T, obstacles, p_goal)

        if warm is not None and warm.x.shape == (self.n_decision,):
            x0 = warm.x.copy()
        else:
            s = np.linspace(0.0, 1.0, c.n_ctrl_p)
            P = p_act[:, None] + (p_goal - p_act)[:, None] * s[None, :]
            Th = np.repeat(theta_act.reshape(N_QUAT, 1), c.n_ctrl_psi, axis=1)
            x0 = np.concatenate([P.ravel(), Th.ravel()])

        n_p = N_POS * c.n_ctrl_p
        lb = np.full(self.n_decision, -np.inf)
        ub = np.full(self.n_decision, np.inf)
        pins = [(0, c.n_ctrl_p, 0, p_act), (n_p, c.n_ctrl_psi, 0, theta_act.ravel())]
        # terminal rest: the last three position control points sit on the goal
        pins += [(0, c.n_ctrl_p, c.n_ctrl_p - k, p_goal) for k in (1, 2, 3)]
        for off, ncol, col, vals in pins:
            idx = off + np.arange(len(vals)) * ncol + col
            lb[idx] = vals
            ub[idx] = vals
        Bp, Bq = self.Bp, self.Bq

        def prepare(x):
            P, Th = self.split(x)
            p = (P @ Bp.T).T
            quat = (Th @ Bq.T).T.reshape(c.n_knots, 2, 4)
            return {"P": P, "Th": Th, "p": p, "quat": quat}

        def rest(key):
            return lambda ctx: ad.concatenate([ctx[key][:, -1] - ctx[key][:, -2],
                                               ctx[key][:, -1] - 2.0 * ctx[key][:, -2] + ctx[key][:, -3]])

        costs = [
            CostTerm("palm_alignment", lambda ctx: _palm_alignment(ctx["p"], ctx["quat"]),
                     np.tile([c.w_x, c.w_y, c.w_x, c.w_y], c.n_knots)),
            CostTerm("smooth_p_vel", lambda ctx: derivative_control_points(ctx["P"], T, 1).ravel(), c.w_pd),
            CostTerm("smooth_theta_vel", lambda ctx: derivative_control_points(ctx["Th"], T, 1).ravel(),
                     c.w_psid),
            CostTerm("smooth_p_acc", lambda ctx: derivative_control_points(ctx["P"], T, 2).ravel(), c.w_pdd),
            CostTerm("smooth_theta_acc", lambda ctx: derivative_control_points(ctx["Th"], T, 2).ravel(),
                     c.w_psidd),
        ]
        constraints = [
            Constraint("terminal_orientation",
                       lambda ctx: aligned_difference(ctx["Th"][:, -1].reshape(2, 4), theta_goal).ravel(), "eq"),
            Constraint("terminal_rest_theta", rest("Th"), "eq"),
            # end knots are fixed by the start bound and the terminal constraint
            Constraint("unit_quaternion", lambda ctx: _unit_norm(ctx["quat"][1:-1]), "eq"),
        ] + obstacle_cons

        def vel_bounds(ctx):
            Pd = derivative_control_points(ctx["P"], T, 1).ravel()
            return ad.concatenate([Pd - c.pd_max, -c.pd_max - Pd])

        def acc_bounds(ctx):
            Pdd = derivative_control_points(ctx["P"], T, 2).ravel()
            return ad.concatenate([Pdd - c.pdd_max, -c.pdd_max - Pdd])

        constraints += [Constraint("velocity_bounds", vel_bounds, "ineq"),
                        Constraint("acceleration_bounds", acc_bounds, "ineq")]
        return assemble(costs, constraints, bounds=(lb, ub), x0=x0, prepare=prepare)

    def solve_step(self, p_act, theta_act, goal, obstacles=(), t0=0.0, horizon=None, warm=None):
        T = float(horizon if horizon is not None else self.cfg.horizon0)
        problem = self.build_problem(p_act, theta_act, goal, obstacles, T, warm)
        mult, rho = warm_multipliers(warm)
        sol = solve(problem, self.cfg.solver, multipliers=mult, penalty=rho)
        P, Th = self.split(sol.x)
        P, Th = P.copy(), Th.copy()

        def sampler(tb):
            return evaluate(P, tb).T, evaluate(Th, tb).T.reshape(len(tb), 2, 4)

        return SampledPlan(T, t0, sol.converged, sol, sol.x.copy(), sampler)


class DiscretizedTaskPlanner:
    """Knot states and rates with Euler transitions; positions linear between knots."""

    def __init__(self, cfg: TaskPlanConfig | None = None):
        self.cfg = cfg or TaskPlanConfig()
        self.tbars = np.arange(self.cfg.n_knots) / self.cfg.K

    @property
    def n_decision(self) -> int:
        return 2 * self.cfg.n_knots * N_STATE

    def split(self, x):
        k1 = self.cfg.n_knots
        s = x[:k1 * N_STATE].reshape(k1, N_STATE)
        r = x[k1 * N_STATE:].reshape(k1, N_STATE)
        return s[:, :N_POS], s[:, N_POS:], r[:, :N_POS], r[:, N_POS:]

    def build_problem(self, p_act, theta_act, goal: TaskGoal, obstacles=(), horizon=None,
                      warm: SampledPlan | None = None) -> NlpProblem:
        c = self.cfg
        k1 = c.n_knots
        T = float(horizon if horizon is not None else c.horizon0)
        dt = T / c.K
        p_act = np.asarray(p_act, dtype=float)
        theta_act = np.asarray(theta_act, dtype=float).reshape(2, 4)
        p_goal = np.asarray(goal.p_goal, dtype=float)
        theta_goal = np.asarray(goal.theta_goal, dtype=float)
        obstacle_cons = _obstacles(c, self.tbars, T, obstacles, p_goal)

        if warm is not None and warm.x.shape == (self.n_decision,):
            x0 = warm.x.copy()
        else:
            p = p_act + np.outer(self.tbars, p_goal - p_act)
            th = np.repeat(theta_act.reshape(1, N_QUAT), k1, axis=0)
            pd = np.repeat(((p_goal - p_act) / T)[None], k1, axis=0)
            x0 = np.concatenate([np.hstack([p, th]).ravel(), np.hstack([pd, np.zeros((k1, N_QUAT))]).ravel()])

        lb = np.full(self.n_decision, -np.inf)
        ub = np.full(self.n_decision, np.inf)
        rates = k1 * N_STATE
        fixed = {0: np.concatenate([p_act, theta_act.ravel()])}
        for row, vals in fixed.items():
            lb[row * N_STATE:(row + 1) * N_STATE] = vals
            ub[row * N_STATE:(row + 1) * N_STATE] = vals
        last = (k1 - 1) * N_STATE
        lb[last:last + N_POS] = p_goal
        ub[last:last + N_POS] = p_goal
        lb[rates + last:rates + last + N_STATE] = 0.0  # at rest on arrival
        ub[rates + last:rates + last + N_STATE] = 0.0
        for i in range(k1):
            sl = slice(rates + i * N_STATE, rates + i * N_STATE + N_POS)
            lb[sl] = np.maximum(lb[sl], -c.pd_max)
            ub[sl] = np.minimum(ub[sl], c.pd_max)

        def prepare(x):
            p, th, pd, thd = self.split(x)
            return {"p": p, "quat": th.reshape(k1, 2, 4), "th": th, "pd": pd, "thd": thd}

        costs = [
            CostTerm("palm_alignment", lambda ctx: _palm_alignment(ctx["p"], ctx["quat"]),
                     np.tile([c.w_x, c.w_y, c.w_x, c.w_y], k1)),
            CostTerm("smooth_p_vel", lambda ctx: ctx["pd"].ravel(), c.w_pd),
            CostTerm("smooth_theta_vel", lambda ctx: ctx["thd"].ravel(), c.w_psid),
            CostTerm("smooth_p_acc", lambda ctx: ((ctx["pd"][1:] - ctx["pd"][:-1]) / dt).ravel(), c.w_pdd),
            CostTerm("smooth_theta_acc", lambda ctx: ((ctx["thd"][1:] - ctx["thd"][:-1]) / dt).ravel(),
                     c.w_psidd),
        ]

        def transition(ctx):
            return ad.concatenate([(ctx["p"][1:] - ctx["p"][:-1] - dt * ctx["pd"][:-1]).ravel(),
                                   (ctx["th"][1:] - ctx["th"][:-1] - dt * ctx["thd"][:-1]).ravel()])

        def acc_bounds(ctx):
            a = ((ctx["pd"][1:] - ctx["pd"][:-1]) / dt).ravel()
            return ad.concatenate([a - c.pdd_max, -c.pdd_max - a])

        constraints = [
            Constraint("euler_transition", transition, "eq"),
            Constraint("terminal_orientation",
                       lambda ctx: aligned_difference(ctx["quat"][-1], theta_goal).ravel(), "eq"),
            Constraint("unit_quaternion", lambda ctx: _unit_norm(ctx["quat"][1:-1]), "eq"),
            Constraint("acceleration_bounds", acc_bounds, "ineq"),
        ] + obstacle_cons
        return assemble(costs, constraints, bounds=(lb, ub), x0=x0, prepare=prepare)

    def solve_step(self, p_act, theta_act, goal, obstacles=(), t0=0.0, horizon=None, warm=None):
        T = float(horizon if horizon is not None else self.cfg.horizon0)
        problem = self.build_problem(p_act, theta_act, goal, obstacles, T, warm)
        mult, rho = warm_multipliers(warm)
        sol = solve(problem, self.cfg.solver, multipliers=mult, penalty=rho)
        p, th, _, _ = self.split(sol.x)
        p, th = p.copy(), th.copy()
        grid = self.tbars

        def sampler(tb):
            pi = np.stack([np.interp(tb, grid, p[:, j]) for j in range(N_POS)], axis=-1)
            qi = np.stack([np.interp(tb, grid, th[:, j]) for j in range(N_QUAT)], axis=-1)
            return pi, qi.reshape(len(tb), 2, 4)

        return SampledPlan(T, t0, sol.converged, sol, sol.x.copy(), sampler)
