"""Kinematic tree for a dual-arm mobile manipulator.

Models are loaded from YAML ``.model`` documents (see
``data/eva_like.model`` for the schema). Forward kinematics is written with
the dispatching helpers of :mod:`bezier_mpc.ad`, so it runs on plain arrays
and on dual numbers; configurations may carry leading batch axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from . import ad
from .rotation import multiply, quaternion_to_rotation, rotate

N_DOF = 18
BASE = slice(0, 3)
BASE_XY = slice(0, 2)
UPPER = slice(3, 18)
YAW = 2


class ModelError(ValueError):
    pass


class ModelParseError(ModelError):
    pass


class LoopDetectedError(ModelError):
    pass


class LimitOrderError(ModelError):
    pass


def rpy_quaternion(rpy) -> np.ndarray:
    """Quaternion of fixed-axis roll/pitch/yaw (applied X then Y then Z)."""
    r, p, y = (0.5 * float(a) for a in rpy)
    qx = np.array([np.cos(r), np.sin(r), 0.0, 0.0])
    qy = np.array([np.cos(p), 0.0, np.sin(p), 0.0])
    qz = np.array([np.cos(y), 0.0, 0.0, np.sin(y)])
    return multiply(qz, multiply(qy, qx))


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str  # "revolute" | "prismatic"
    parent: str
    axis: np.ndarray
    offset: np.ndarray
    fixed_rotation: np.ndarray  # quaternion
    q_min: float
    q_max: float
    qd_min: float
    qd_max: float


@dataclass(frozen=True)
class Frame:
    parent: str
    offset: np.ndarray
    fixed_rotation: np.ndarray


@dataclass(frozen=True)
class EndEffectorPose:
    position: np.ndarray
    orientation: np.ndarray  # quaternion (w, x, y, z)
    rotation: np.ndarray


@dataclass(frozen=True)
class KinematicModel:
    name: str
    joints: tuple[Joint, ...]
    end_effectors: dict = field(default_factory=dict)  # {"right": Frame, "left": Frame}

    def __post_init__(self):
        index = {j.name: i for i, j in enumerate(self.joints)}
        if len(index) != len(self.joints):
            raise ModelParseError("duplicate joint names")
        for j in self.joints:
            if j.parent != "world" and j.parent not in index:
                raise ModelParseError(f"joint {j.name!r} has unknown parent {j.parent!r}")
            if not j.q_min < j.q_max:
                raise LimitOrderError(f"joint {j.name!r}: q_min must be < q_max")
            if not j.qd_min < 0.0 < j.qd_max:
                raise LimitOrderError(f"joint {j.name!r}: need qd_min < 0 < qd_max")
        order = _topological_order(self.joints, index)
        for side, frame in self.end_effectors.items():
            if frame.parent not in index:
                raise ModelParseError(f"end effector {side!r} has unknown parent {frame.parent!r}")
        needed = set()
        for frame in self.end_effectors.values():
            name = frame.parent
            while name != "world":
                needed.add(name)
                name = self.joints[index[name]].parent
        object.__setattr__(self, "_index", index)
        object.__setattr__(self, "_order", tuple(i for i in order if self.joints[i].name in needed))

    @property
    def n_dof(self) -> int:
        return len(self.joints)

    @property
    def q_min(self) -> np.ndarray:
        return np.array([j.q_min for j in self.joints])

    @property
    def q_max(self) -> np.ndarray:
        return np.array([j.q_max for j in self.joints])

    @property
    def qd_min(self) -> np.ndarray:
        return np.array([j.qd_min for j in self.joints])

    @property
    def qd_max(self) -> np.ndarray:
        return np.array([j.qd_max for j in self.joints])

    def frames(self, q):
        """Position and quaternion of every end-effector frame.

        Returns ``{side: (position (..., 3), quaternion (..., 4))}``.
        """
        if ad.value(q).shape[-1] != self.n_dof:
            raise ValueError(f"expected {self.n_dof} joint values, got {ad.value(q).shape[-1]}")
        batch = ad.value(q).shape[:-1]
        links = {"world": (np.zeros(batch + (3,)), np.broadcast_to([1.0, 0.0, 0.0, 0.0], batch + (4,)))}
        for i in self._order:
            j = self.joints[i]
            p_par, r_par = links[j.parent]
            origin = p_par + rotate(r_par, j.offset) if np.any(j.offset) else p_par
            r0 = multiply(r_par, j.fixed_rotation) if j.fixed_rotation[0] != 1.0 else r_par
            theta = q[..., i]
            if j.kind == "revolute":
                half = 0.5 * theta
                s = ad.sin(half)
                local = ad.stack([ad.cos(half), s * j.axis[0], s * j.axis[1], s * j.axis[2]], axis=-1)
                links[j.name] = (origin, multiply(r0, local))
            else:
                step = _outer(theta, j.axis)
                links[j.name] = (origin + rotate(r0, step), r0)
        out = {}
        for side, frame in self.end_effectors.items():
            p_par, r_par = links[frame.parent]
            out[side] = (p_par + rotate(r_par, frame.offset), multiply(r_par, frame.fixed_rotation))
        return out

    def frames_jacobian(self, q):
        """Palm poses with their geometric Jacobians (plain arrays, batched).

        Returns ``{side: (p (...,3), quat (...,4), Jp (...,3,n), Jquat (...,4,n))}``.
        Revolute joint ``i`` with world axis ``a`` through ``o`` contributes
        ``a x (p - o)`` to ``Jp`` and ``0.5 [0, a] * quat`` to ``Jquat``.
        """
        q = np.asarray(q, dtype=float)
        batch = q.shape[:-1]
        ident = np.broadcast_to([1.0, 0.0, 0.0, 0.0], batch + (4,))
        links = {"world": (np.zeros(batch + (3,)), ident)}
        axes, origins = {}, {}
        for i in self._order:
            j = self.joints[i]
            p_par, r_par = links[j.parent]
            origin = p_par + rotate(r_par, j.offset)
            r0 = multiply(r_par, np.broadcast_to(j.fixed_rotation, batch + (4,)))
            a = rotate(r0, j.axis)
            axes[i], origins[i] = a, origin
            if j.kind == "revolute":
                half = 0.5 * q[..., i]
                local = np.stack([np.cos(half), *(np.sin(half) * c for c in j.axis)], axis=-1)
                links[j.name] = (origin, multiply(r0, local))
            else:
                links[j.name] = (origin + a * q[..., i, None], r0)
        out = {}
        n = self.n_dof
        for side, frame in self.end_effectors.items():
            p_par, r_par = links[frame.parent]
            p = p_par + rotate(r_par, frame.offset)
            quat = multiply(r_par, np.broadcast_to(frame.fixed_rotation, batch + (4,)))
            Jp = np.zeros(batch + (3, n))
            Jq = np.zeros(batch + (4, n))
            name = frame.parent
            while name != "world":
                i = self._index[name]
                j = self.joints[i]
                a = axes[i]
                if j.kind == "revolute":
                    Jp[..., i] = np.cross(a, p - origins[i])
                    omega = np.concatenate([np.zeros(batch + (1,)), a], axis=-1)
                    Jq[..., i] = 0.5 * multiply(omega, quat)
                else:
                    Jp[..., i] = a
                name = j.parent
            out[side] = (p, quat, Jp, Jq)
        return out


def _outer(theta, axis):
    axis = np.asarray(axis, dtype=float)
    if ad.is_dual(theta):
        return ad.stack([theta * a for a in axis], axis=-1)
    return np.asarray(theta)[..., None] * axis


def _topological_order(joints, index):
    order, state = [], {}

    def visit(i):
        if state.get(i) == "done":
            return
        if state.get(i) == "active":
            raise LoopDetectedError(f"kinematic loop through {joints[i].name!r}")
        state[i] = "active"
        parent = joints[i].parent
        if parent != "world":
            visit(index[parent])
        state[i] = "done"
        order.append(i)

    for i in range(len(joints)):
        visit(i)
    return order


def _vec(d, key, default):
    v = np.asarray(d.get(key, default), dtype=float)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise ModelParseError(f"{key!r} must be a finite 3-vector, got {d.get(key)!r}")
    return v


def model_from_dict(doc: dict) -> KinematicModel:
    if not isinstance(doc, dict) or "joints" not in doc:
        raise ModelParseError("model document needs a 'joints' list")
    joints = []
    for jd in doc["joints"]:
        try:
            kind = jd["type"]
            if kind not in ("revolute", "prismatic"):
                raise ModelParseError(f"unknown joint type {kind!r}")
            axis = _vec(jd, "axis", None)
            if np.linalg.norm(axis) == 0:
                raise ModelParseError(f"joint {jd['name']!r} has a zero axis")
            pos = jd["position"]
            vel = jd["velocity"]
            joints.append(Joint(
                name=str(jd["name"]), kind=kind, parent=str(jd.get("parent", "world")),
                axis=axis / np.linalg.norm(axis), offset=_vec(jd, "offset", [0, 0, 0]),
                fixed_rotation=rpy_quaternion(_vec(jd, "rpy", [0, 0, 0])),
                q_min=float(pos[0]), q_max=float(pos[1]),
                qd_min=float(vel[0]), qd_max=float(vel[1]),
            ))
        except (KeyError, TypeError, IndexError) as exc:
            raise ModelParseError(f"malformed joint entry {jd!r}: {exc}") from exc
    ees = {}
    for side, fd in (doc.get("end_effectors") or {}).items():
        try:
            ees[side] = Frame(parent=str(fd["parent"]), offset=_vec(fd, "offset", [0, 0, 0]),
                              fixed_rotation=rpy_quaternion(_vec(fd, "rpy", [0, 0, 0])))
        except (KeyError, TypeError) as exc:
            raise ModelParseError(f"malformed end effector {side!r}: {exc}") from exc
    return KinematicModel(name=str(doc.get("name", "model")), joints=tuple(joints), end_effectors=ees)


def load_model(source=None) -> KinematicModel:
    """Load a model from a path, a YAML string, or the bundled default."""
    if source is None:
        text = resources.files("bezier_mpc").joinpath("data/eva_like.model").read_text()
    elif isinstance(source, Path) or (isinstance(source, str) and "\n" not in source
                                      and Path(source).suffix in (".model", ".yaml", ".yml")):
        text = Path(source).read_text()
    else:
        text = source
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelParseError(str(exc)) from exc
    return model_from_dict(doc)


_DEFAULT = None


def default_model() -> KinematicModel:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = load_model()
    return _DEFAULT


def forward_kinematics(model: KinematicModel, q) -> tuple[EndEffectorPose, EndEffectorPose]:
    """Right and left palm poses in the inertial frame for a single configuration."""
    q = np.asarray(q, dtype=float)
    if q.shape != (model.n_dof,):
        raise ValueError(f"expected configuration of shape ({model.n_dof},), got {q.shape}")
    frames = model.frames(q)
    poses = []
    for side in ("right", "left"):
        p, r = frames[side]
        poses.append(EndEffectorPose(position=p, orientation=r, rotation=quaternion_to_rotation(r)))
    return poses[0], poses[1]


def midpoint(right_p, left_p):
    return 0.5 * (right_p + left_p)


def select_group(x, group: str):
    """Rows of a configuration vector or control-point matrix for a body group."""
    rows = {"upper": UPPER, "base": BASE, "base_xy": BASE_XY}
    if group not in rows:
        raise ValueError(f"unknown group {group!r}")
    return x[rows[group]]


def default_configuration() -> np.ndarray:
    return np.zeros(N_DOF)
