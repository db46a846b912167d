"""Benchmark suites comparing the control-point planners with discretized baselines.

* :func:`bench_table1`: task-space planner in three orientation modes.
* :func:`bench_table2`: sine tracking with discretized and Bezier whole-body planners.
* :func:`bench_scaling`: whole-body solve time over horizons and capability sets.

Decision-variable counts come from the configurations, never from the solver.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baseline import discretized_decision_count
from .mpc_task import TaskGoal, TaskPlanConfig, TaskPlanner, reference_trajectory, shrink_horizon
from .mpc_wholebody import WholeBodyConfig
from .robot import default_model
from .scenario import ScenarioConfig, scenario_from_dict
from .simulator import palms, run_closed_loop, tracking_error
from .task_modes import DiscretizedTaskPlanner, QuaternionBezierPlanner, SampledPlan

log = logging.getLogger(__name__)

FIG5_GOAL = {"right": [2.4, -0.22, 0.52], "left": [2.4, 0.22, 0.52]}
FIG5_OBSTACLE = {"center": [1.4, 0.05, 0.52], "radius": 0.05}
SINE = {"amplitude": [0.2, 0.0, 0.1, 0.2, 0.0, 0.1], "period": 8.0}


@dataclass
class BenchmarkReport:
    name: str
    rows: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"name": self.name, "rows": self.rows, "checks": self.checks, "notes": self.notes}

    def write(self, outdir) -> Path:
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        path = outdir / f"{self.name}.json"
        path.write_text(json.dumps(self.to_dict(), indent=2, default=_plain) + "\n")
        return path

    def format(self) -> str:
        lines = [f"== {self.name} =="]
        if self.rows:
            keys = list(self.rows[0])
            lines.append("  ".join(f"{k:>14}" for k in keys))
            for r in self.rows:
                lines.append("  ".join(f"{_fmt(r.get(k)):>14}" for k in keys))
        for k, v in self.checks.items():
            lines.append(f"{'PASS' if v else 'FAIL'}  {k}")
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _stats(times) -> tuple[float, float]:
    t = np.asarray(times, dtype=float)
    return (float(t.mean()), float(t.std())) if t.size else (float("nan"), float("nan"))


# ---------------------------------------------------------------- table 1

def task_mode_counts(knots: int = 8, cps: int = 8) -> dict:
    cfg = TaskPlanConfig(n_ctrl_p=cps, n_ctrl_psi=cps, n_knots=knots)
    return {
        "a_discretized_quaternion": DiscretizedTaskPlanner(cfg).n_decision,
        "b_bezier_quaternion": QuaternionBezierPlanner(cfg).n_decision,
        "c_bezier_angle_axis": cfg.n_decision,
    }


def _psi_plan_sampler(plan):
    def sampler(tb):
        p, th = reference_trajectory(plan, plan.t0 + tb * plan.horizon)
        return p, th
    return SampledPlan(plan.horizon, plan.t0, plan.converged, plan.solution, None, sampler)


def bench_table1(knots: int = 8, cps: int = 8, steps: int = 10, advance: float = 0.5,
                 samples: int = 1000, seed: int = 0) -> BenchmarkReport:
    """Receding-horizon task-space solves on the static-obstacle setup, one run per mode."""
    cfg = TaskPlanConfig(n_ctrl_p=cps, n_ctrl_psi=cps, n_knots=knots)
    sc = scenario_from_dict({"goal": FIG5_GOAL, "obstacles": [FIG5_OBSTACLE], "seed": seed})
    p0, th0 = palms(sc.model, sc.start_q)
    goal = TaskGoal(sc.p_goal, th0)
    rng = np.random.default_rng(seed)
    tb_samples = np.sort(rng.uniform(0.0, 1.0, samples))
    report = BenchmarkReport("table1")
    modes = {
        "a_discretized_quaternion": DiscretizedTaskPlanner(cfg),
        "b_bezier_quaternion": QuaternionBezierPlanner(cfg),
        "c_bezier_angle_axis": TaskPlanner(cfg),
    }
    counts = task_mode_counts(knots, cps)
    for name, planner in modes.items():
        p, th = p0.copy(), th0.copy()
        warm = None
        times, iters, conv, norm_err = [], [], 0, 0.0
        for k in range(steps + 1):
            t = k * advance
            T = shrink_horizon(cfg.horizon0, t, cfg.t_min)
            plan = planner.solve_step(p, th, goal, sc.obstacles, t0=t, horizon=T, warm=warm)
            times.append(plan.solution.solve_time)
            iters.append(plan.solution.iterations)
            conv += int(plan.converged)
            sampled = plan if isinstance(plan, SampledPlan) else _psi_plan_sampler(plan)
            _, quats = sampled.sample(tb_samples)
            norm_err = max(norm_err, float(np.max(np.abs(np.linalg.norm(quats, axis=-1) - 1.0))))
            pn, thn = sampled.sample(min(advance / T, 1.0))
            p = pn[0]
            th = thn[0] / np.linalg.norm(thn[0], axis=-1, keepdims=True)
            warm = plan
        mean, std = _stats(times)
        report.rows.append({"mode": name, "n_decision": counts[name], "mean_time_s": mean,
                            "std_time_s": std, "median_outer_iter": float(np.median(iters)),
                            "converged": f"{conv}/{steps + 1}", "max_unit_norm_err": norm_err})
    t = {r["mode"]: r["mean_time_s"] for r in report.rows}
    err = {r["mode"]: r["max_unit_norm_err"] for r in report.rows}
    report.checks = {
        "counts 224/112/96": [counts[m] for m in modes] == [2 * knots * 14, cps * 14, cps * 12],
        "angle-axis curve unit norm on all samples (<=1e-12)": err["c_bezier_angle_axis"] <= 1e-12,
        "time (c) < (b)": t["c_bezier_angle_axis"] < t["b_bezier_quaternion"],
        "time (b) < (a)": t["b_bezier_quaternion"] < t["a_discretized_quaternion"],
    }
    report.notes.append("unit-norm error for (a) and (b) is measured between knots, where it is not enforced")
    return report


# ---------------------------------------------------------------- table 2

def sine_scenario(planner: str, n_knots: int, horizon: float = 5.0, duration: float = 8.0,
                  admittance: bool = False, obstacles=(), force=None, seed: int = 0) -> ScenarioConfig:
    doc = {"name": f"sine_{planner}_{n_knots}", "seed": seed, "planner": planner, "duration": duration,
           "sine": SINE, "obstacles": list(obstacles),
           "wholebody": {"horizon": horizon, "n_knots": n_knots, "admittance": admittance}}
    if force is not None:
        doc["force_reference"] = force
    return scenario_from_dict(doc)


def wholebody_count(planner: str, n_knots: int, admittance: bool = False) -> int:
    if planner == "discretized":
        return discretized_decision_count(n_knots, admittance=admittance)
    return WholeBodyConfig(n_knots=n_knots, admittance=admittance).n_decision


def bench_table2(horizon: float = 5.0, duration: float = 8.0, knots=(6, 26),
                 max_loops: int | None = None) -> BenchmarkReport:
    report = BenchmarkReport("table2")
    errs = {}
    for planner in ("discretized", "bezier"):
        for k in knots:
            sc = sine_scenario(planner, k, horizon, duration)
            trace = run_closed_loop(sc, max_loops=max_loops)
            s = trace.summary
            e = tracking_error(trace.rows, sc.sine.amplitude)
            errs[(planner, k)] = e
            report.rows.append({
                "planner": planner, "knots": k, "n_decision": wholebody_count(planner, k),
                "tracking_error": e, "mean_time_s": s["mean_wb_solve_time"],
                "std_time_s": s["std_wb_solve_time"], "nonconverged": s["wb_nonconverged"],
                "max_consistency": s["max_consistency"], "outcome": trace.outcome})
    lo, hi = min(knots), max(knots)
    report.checks = {
        "counts 216/936/108/108": [wholebody_count(p, k) for p in ("discretized", "bezier") for k in (6, 26)]
        == [216, 936, 108, 108],
        f"error(discretized@{lo}) > 1.1 error(bezier@{lo})":
            errs[("discretized", lo)] > 1.1 * errs[("bezier", lo)],
        f"error(discretized@{hi}) >= 1.1 error(bezier@{hi})":
            errs[("discretized", hi)] >= 1.1 * errs[("bezier", hi)],
    }
    report.notes.append("tracking error: mean palm position error divided by the reference peak-to-peak span")
    return report


# ---------------------------------------------------------------- scaling

CAPABILITIES = ("tracking", "obstacle", "force")


def scaling_scenario(planner: str, horizon: float, capability: str, n_knots: int = 26,
                     duration: float = 1.0) -> ScenarioConfig:
    obstacles = []
    force = None
    if capability in ("obstacle", "force"):
        # off to the side of the reach, close enough to be checked every knot
        obstacles = [{"center": [0.9, 0.9, 0.5], "radius": 0.05}]
    if capability == "force":
        force = {"value": [0, 0, 10.0, 0, 0, 10.0], "t_start": 0.0, "duration": 1.0}
    return sine_scenario(planner, n_knots, horizon, duration, admittance=capability == "force",
                         obstacles=obstacles, force=force)


def bench_scaling(horizons=(1.0, 2.0, 3.0), capabilities=CAPABILITIES, n_knots: int = 26,
                  loops: int = 25) -> BenchmarkReport:
    report = BenchmarkReport("scaling")
    means = {}
    for planner in ("bezier", "discretized"):
        for cap in capabilities:
            for T in horizons:
                sc = scaling_scenario(planner, T, cap, n_knots, duration=loops * 0.02)
                trace = run_closed_loop(sc, max_loops=loops)
                times = [r["wb_solve_time"] for r in trace.rows]
                mean, std = _stats(times)
                means[(planner, cap, T)] = mean
                report.rows.append({"planner": planner, "capability": cap, "horizon": T,
                                    "n_decision": wholebody_count(planner, n_knots, cap == "force"),
                                    "mean_time_s": mean, "std_time_s": std,
                                    "nonconverged": trace.summary["wb_nonconverged"],
                                    "outcome": trace.outcome})

    def cv(planner, cap):
        v = np.array([means[(planner, cap, T)] for T in horizons])
        return float(v.std() / v.mean())

    def cap_mean(planner, cap):
        return float(np.mean([means[(planner, cap, T)] for T in horizons]))

    for cap in capabilities:
        report.checks[f"bezier faster than discretized ({cap})"] = all(
            means[("bezier", cap, T)] < means[("discretized", cap, T)] for T in horizons)
        report.checks[f"bezier horizon CV < discretized horizon CV ({cap})"] = \
            cv("bezier", cap) < cv("discretized", cap)
        report.notes.append(f"{cap}: horizon CV bezier {cv('bezier', cap):.3f}, "
                            f"discretized {cv('discretized', cap):.3f}")
    if "tracking" in capabilities and "force" in capabilities:
        r_track = cap_mean("discretized", "tracking") / cap_mean("bezier", "tracking")
        r_force = cap_mean("discretized", "force") / cap_mean("bezier", "force")
        report.checks["discretized/bezier time ratio grows with force capability"] = r_force > r_track
        report.notes.append(f"time ratio discretized/bezier: tracking {r_track:.2f}, +force {r_force:.2f}")
    return report
