"""Scenario files: YAML documents describing one closed-loop experiment.

Top-level keys (all optional except ``goal`` or ``sine``)::

    name, seed, model, t_loop, duration, d_safe, planner (bezier|discretized)
    start_q: 18 values, or {base: [x, y, yaw], upper: 15 values}
    goal: {right: [x,y,z], left: [x,y,z], right_orientation: [w,x,y,z], ...}
          or {object_center: [x,y,z], object_yaw: rad, grasp_offset: m}
          or {hold: true} (goal = start pose)
    object: {center, yaw, width, stiffness, half_extent: [x, z]}
    obstacles: [{center, radius, velocity}]
    disturbances: [{start, duration, target: right|left|obstacle:<k>, force | velocity}]
    force_reference: {value: 6 values (palm frames), t_start, duration}
    sine: {amplitude: 6 values, period}       # scripted reference, no task planner
    tolerance: {position, orientation}
    stop_on_goal: bool
    task: TaskPlanConfig fields;  wholebody: WholeBodyConfig fields;  solver: SolverOptions fields
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .mpc_task import Obstacle, TaskPlanConfig
from .mpc_wholebody import WholeBodyConfig
from .nlp import SolverOptions
from .robot import N_DOF, KinematicModel, ModelError, default_model, load_model


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class ObjectConfig:
    center: np.ndarray
    yaw: float = 0.0
    width: float = 0.4
    stiffness: float = 2000.0
    half_extent: tuple = (0.15, 0.15)

    @property
    def axis(self) -> np.ndarray:
        """Object y axis: the direction across its width."""
        return np.array([-np.sin(self.yaw), np.cos(self.yaw), 0.0])


@dataclass(frozen=True)
class DisturbanceEvent:
    start: float
    duration: float
    target: str  # "right" | "left" | "obstacle:<k>"
    force: np.ndarray | None = None  # world frame, N
    velocity: np.ndarray | None = None  # obstacle velocity override, m/s

    def active(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration


@dataclass(frozen=True)
class SineReference:
    amplitude: np.ndarray  # (6,) world-frame offsets added to the start palm positions
    period: float = 4.0


@dataclass(frozen=True)
class ForceReference:
    value: np.ndarray  # (6,) palm-frame target
    t_start: float = 0.0
    duration: float = 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    model: KinematicModel = field(default_factory=default_model)
    t_loop: float = 0.02
    duration: float = 20.0
    d_safe: float = 0.3
    planner: str = "bezier"
    start_q: np.ndarray = field(default_factory=lambda: np.zeros(N_DOF))
    p_goal: np.ndarray | None = None
    theta_goal: np.ndarray | None = None
    object: ObjectConfig | None = None
    obstacles: tuple = ()
    disturbances: tuple = ()
    force_reference: ForceReference | None = None
    sine: SineReference | None = None
    tol_position: float = 1e-2
    tol_orientation: float = 1e-2
    stop_on_goal: bool = True
    safety_tolerance: float = 0.05
    task: TaskPlanConfig = field(default_factory=TaskPlanConfig)
    wholebody: WholeBodyConfig = field(default_factory=WholeBodyConfig)


def _vector(value, n, key):
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{key}: expected {n} numbers") from exc
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ScenarioError(f"{key}: expected {n} finite numbers, got {value!r}")
    return v


def _config(cls, overrides: dict, key: str, **extra):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - names
    if unknown:
        raise ScenarioError(f"{key}: unknown fields {sorted(unknown)}")
    values = dict(overrides)
    for name in ("stiffness", "damping"):
        if name in values:
            v = values[name]
            values[name] = tuple(float(a) for a in (v if isinstance(v, (list, tuple)) else [v] * 6))
    values.update(extra)
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{key}: {exc}") from exc


def set_path(doc: dict, dotted: str, value):
    """Apply a ``section.field=value`` override to a raw scenario document."""
    node = doc
    parts = dotted.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ScenarioError(f"override {dotted!r}: {p!r} is not a section")
    node[parts[-1]] = value


def load_document(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ScenarioError(f"scenario file not found: {path}")
    try:
        doc = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    doc.setdefault("_base_dir", str(path.parent))
    return doc


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    doc = dict(doc)
    base_dir = Path(doc.pop("_base_dir", "."))
    known = {"name", "seed", "model", "t_loop", "duration", "d_safe", "planner", "start_q", "goal",
             "object", "obstacles", "disturbances", "force_reference", "sine", "tolerance",
             "stop_on_goal", "safety_tolerance", "task", "wholebody", "solver"}
    unknown = set(doc) - known
    if unknown:
        raise ScenarioError(f"unknown scenario keys {sorted(unknown)}")

    model = default_model()
    if doc.get("model") not in (None, "default"):
        mpath = Path(doc["model"])
        if not mpath.is_absolute():
            mpath = base_dir / mpath
        try:
            model = load_model(mpath)
        except (OSError, ModelError) as exc:
            raise ScenarioError(f"model: {exc}") from exc
    if model.n_dof != N_DOF:
        raise ScenarioError(f"model must have {N_DOF} joints")

    t_loop = float(doc.get("t_loop", 0.02))
    d_safe = float(doc.get("d_safe", 0.3))
    if t_loop <= 0 or d_safe <= 0:
        raise ScenarioError("t_loop and d_safe must be positive")
    planner = doc.get("planner", "bezier")
    if planner not in ("bezier", "discretized"):
        raise ScenarioError(f"planner must be 'bezier' or 'discretized', got {planner!r}")

    sq = doc.get("start_q")
    if sq is None:
        start_q = np.zeros(N_DOF)
    elif isinstance(sq, dict):
        start_q = np.zeros(N_DOF)
        if "base" in sq:
            start_q[:3] = _vector(sq["base"], 3, "start_q.base")
        if "upper" in sq:
            start_q[3:] = _vector(sq["upper"], N_DOF - 3, "start_q.upper")
    else:
        start_q = _vector(sq, N_DOF, "start_q")
    if np.any(start_q < model.q_min) or np.any(start_q > model.q_max):
        raise ScenarioError("start_q violates joint limits")

    obj = None
    if doc.get("object") is not None:
        od = doc["object"]
        obj = ObjectConfig(center=_vector(od.get("center"), 3, "object.center"),
                           yaw=float(od.get("yaw", 0.0)), width=float(od.get("width", 0.4)),
                           stiffness=float(od.get("stiffness", 2000.0)),
                           half_extent=tuple(_vector(od.get("half_extent", [0.15, 0.15]), 2,
                                                     "object.half_extent")))
        if obj.width <= 0 or obj.stiffness < 0:
            raise ScenarioError("object width must be positive and stiffness non-negative")

    obstacles = []
    for k, o in enumerate(doc.get("obstacles") or []):
        radius = float(o.get("radius", 0.0))
        if radius < 0:
            raise ScenarioError(f"obstacles[{k}].radius must be non-negative")
        obstacles.append(Obstacle(center=_vector(o.get("center"), 3, f"obstacles[{k}].center"),
                                  radius=radius,
                                  velocity=_vector(o.get("velocity", [0, 0, 0]), 3,
                                                   f"obstacles[{k}].velocity")))

    events = []
    for k, e in enumerate(doc.get("disturbances") or []):
        target = str(e.get("target", "right"))
        if target not in ("right", "left") and not target.startswith("obstacle:"):
            raise ScenarioError(f"disturbances[{k}].target: unknown target {target!r}")
        if target.startswith("obstacle:"):
            idx = int(target.split(":", 1)[1])
            if not 0 <= idx < len(obstacles):
                raise ScenarioError(f"disturbances[{k}].target: no obstacle {idx}")
        ev = DisturbanceEvent(
            start=float(e.get("start", 0.0)), duration=float(e.get("duration", 0.0)), target=target,
            force=None if e.get("force") is None else _vector(e["force"], 3, f"disturbances[{k}].force"),
            velocity=None if e.get("velocity") is None else _vector(e["velocity"], 3,
                                                                    f"disturbances[{k}].velocity"))
        if ev.duration <= 0:
            raise ScenarioError(f"disturbances[{k}].duration must be positive")
        events.append(ev)
    by_target = {}
    for ev in sorted(events, key=lambda e: e.start):
        last = by_target.get(ev.target)
        if last is not None and ev.start < last.start + last.duration:
            raise ScenarioError(f"overlapping disturbances on {ev.target!r}")
        by_target[ev.target] = ev

    sine = None
    if doc.get("sine") is not None:
        sd = doc["sine"]
        sine = SineReference(amplitude=_vector(sd.get("amplitude"), 6, "sine.amplitude"),
                             period=float(sd.get("period", 4.0)))
        if sine.period <= 0:
            raise ScenarioError("sine.period must be positive")

    p_goal = theta_goal = None
    goal = doc.get("goal")
    if goal is not None:
        if not isinstance(goal, dict):
            raise ScenarioError("goal must be a mapping")
        if goal.get("hold"):
            fr = model.frames(start_q)
            p_goal = np.concatenate([fr["right"][0], fr["left"][0]])
            theta_goal = np.stack([fr["right"][1], fr["left"][1]])
        elif "object_center" in goal:
            c = _vector(goal["object_center"], 3, "goal.object_center")
            yaw = float(goal.get("object_yaw", 0.0))
            off = float(goal.get("grasp_offset", 0.2))
            y = np.array([-np.sin(yaw), np.cos(yaw), 0.0])
            p_goal = np.concatenate([c - off * y, c + off * y])
        else:
            p_goal = np.concatenate([_vector(goal.get("right"), 3, "goal.right"),
                                     _vector(goal.get("left"), 3, "goal.left")])
        if "right_orientation" in goal or "left_orientation" in goal:
            theta_goal = np.stack([_vector(goal.get("right_orientation"), 4, "goal.right_orientation"),
                                   _vector(goal.get("left_orientation"), 4, "goal.left_orientation")])
            theta_goal = theta_goal / np.linalg.norm(theta_goal, axis=1, keepdims=True)
    elif sine is None:
        raise ScenarioError("scenario needs a 'goal' or a 'sine' reference")

    fref = None
    if doc.get("force_reference") is not None:
        fd = doc["force_reference"]
        fref = ForceReference(value=_vector(fd.get("value"), 6, "force_reference.value"),
                              t_start=float(fd.get("t_start", 0.0)),
                              duration=float(fd.get("duration", 1.0)))

    tol = doc.get("tolerance") or {}
    solver = _config(SolverOptions, doc.get("solver") or {}, "solver")
    task = _config(TaskPlanConfig, doc.get("task") or {}, "task", d_safe=d_safe, solver=solver)
    wb_over = dict(doc.get("wholebody") or {})
    if planner == "discretized":
        wb_over.setdefault("admittance", False)
    wholebody = _config(WholeBodyConfig, wb_over, "wholebody", d_safe=d_safe, t_loop=t_loop,
                        solver=solver)

    return ScenarioConfig(
        name=str(doc.get("name", "scenario")), seed=int(doc.get("seed", 0)), model=model,
        t_loop=t_loop, duration=float(doc.get("duration", 20.0)), d_safe=d_safe, planner=planner,
        start_q=start_q, p_goal=p_goal, theta_goal=theta_goal, object=obj,
        obstacles=tuple(obstacles), disturbances=tuple(events), force_reference=fref, sine=sine,
        tol_position=float(tol.get("position", 1e-2)),
        tol_orientation=float(tol.get("orientation", 1e-2)),
        stop_on_goal=bool(doc.get("stop_on_goal", sine is None)),
        safety_tolerance=float(doc.get("safety_tolerance", 0.05)),
        task=task, wholebody=wholebody)


def load_scenario(path, overrides: dict | None = None) -> ScenarioConfig:
    doc = load_document(path)
    for key, value in (overrides or {}).items():
        set_path(doc, key, value)
    return scenario_from_dict(doc)
