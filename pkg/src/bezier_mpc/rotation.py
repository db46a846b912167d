"""Rotation parameterization by (angle, azimuth, polar) = (alpha, beta, gamma).

``alpha`` is the rotation angle and ``(beta, gamma)`` the spherical
coordinates of the rotation axis ``u = (cos b sin g, sin b sin g, cos g)``.
The induced quaternion ``(w, x, y, z)`` has unit norm for every input, so a
Bezier curve in these coordinates stays on the unit sphere everywhere.

Quaternions are stored scalar-first as arrays with a trailing axis of 4.
All functions broadcast over leading axes and accept :class:`~bezier_mpc.ad.Dual`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ad

GAUGE_EPS = 1e-8


@dataclass(frozen=True)
class PsiState:
    alpha: float
    beta: float
    gamma: float

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


@dataclass(frozen=True)
class UnitQuaternion:
    w: float
    x: float
    y: float
    z: float

    def __post_init__(self):
        n = np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"quaternion norm {n} is not 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    @classmethod
    def from_array(cls, q) -> "UnitQuaternion":
        q = np.asarray(q, dtype=float)
        return cls(*q)


def psi_to_quaternion(psi):
    """Map ``(..., 3)`` angle/axis coordinates to ``(..., 4)`` unit quaternions."""
    alpha, beta, gamma = psi[..., 0], psi[..., 1], psi[..., 2]
    sa = ad.sin(0.5 * alpha)
    sg = ad.sin(gamma)
    return ad.stack([
        ad.cos(0.5 * alpha),
        sa * ad.cos(beta) * sg,
        sa * ad.sin(beta) * sg,
        sa * ad.cos(gamma),
    ], axis=-1)


def quaternion_to_psi(q) -> np.ndarray:
    """Inverse of :func:`psi_to_quaternion` (plain arrays only).

    At zero rotation the axis is undetermined; ``beta = gamma = 0`` is chosen.
    """
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w = q[..., 0]
    v = q[..., 1:]
    vn = np.linalg.norm(v, axis=-1)
    alpha = 2.0 * np.arctan2(vn, w)
    degenerate = np.abs(np.sin(0.5 * alpha)) < GAUGE_EPS
    safe = np.where(degenerate, 1.0, vn)
    gamma = np.where(degenerate, 0.0, np.arccos(np.clip(v[..., 2] / safe, -1.0, 1.0)))
    beta = np.where(degenerate, 0.0, np.arctan2(v[..., 1], v[..., 0]))
    return np.stack([alpha, beta, gamma], axis=-1)


def quaternion_to_rotation(q):
    """Rotation matrices ``(..., 3, 3)`` from quaternions ``(..., 4)``.

    Plain-array input is renormalized; a near-zero norm is rejected. Dual
    input is used as given (callers pass exactly-unit quaternions).
    """
    if not ad.is_dual(q):
        q = np.asarray(q, dtype=float)
        n = np.linalg.norm(q, axis=-1, keepdims=True)
        if np.any(n < 1e-12):
            raise ValueError("cannot build a rotation from a zero quaternion")
        q = q / n
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    rows = [
        ad.stack([1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)], axis=-1),
        ad.stack([2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)], axis=-1),
        ad.stack([2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)], axis=-1),
    ]
    return ad.stack(rows, axis=-2)


def rotate(q, v):
    """Rotate vectors ``v`` by quaternions ``q`` (broadcasting)."""
    if not (ad.is_dual(q) or ad.is_dual(v)):
        # v + w t + u x t with t = 2 u x v
        q = np.asarray(q, dtype=float)
        v = np.asarray(v, dtype=float)
        u = q[..., 1:]
        t = 2.0 * _cross(u, v)
        return v + q[..., :1] * t + _cross(u, t)
    R = quaternion_to_rotation(q)
    return (R * _expand(v, -2)).sum(axis=-1)


def _cross(a, b):
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


def _expand(v, axis):
    if ad.is_dual(v):
        shape = list(v.shape)
        shape.insert(len(shape) + 1 + axis if axis < 0 else axis, 1)
        return v.reshape(tuple(shape))
    return np.expand_dims(np.asarray(v, dtype=float), axis)


def multiply(a, b):
    """Hamilton product ``a * b``."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return ad.stack([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ], axis=-1)


def conjugate(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return np.concatenate([[np.cos(0.5 * angle)], np.sin(0.5 * angle) * axis])


def quaternion_distance(a, b):
    """``min(|a - b|, |a + b|)``: zero iff ``a`` and ``b`` are the same rotation."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.minimum(np.linalg.norm(a - b, axis=-1), np.linalg.norm(a + b, axis=-1))


def aligned_difference(q, ref):
    """``q - s*ref`` with ``s = +-1`` picked so that ``s*ref`` is the closer cover.

    The sign comes from the current values, so the result is smooth wherever
    ``q . ref != 0``; its norm equals :func:`quaternion_distance`.
    """
    ref = np.asarray(ref, dtype=float)
    dot = (ad.value(q) * ref).sum(axis=-1)
    s = np.where(dot < 0.0, -1.0, 1.0)
    return q - ref * s[..., None]


def psi_curve_to_quaternions(psi_points) -> np.ndarray:
    """Stacked right/left angle coordinates ``(..., 6)`` to quaternions ``(..., 2, 4)``."""
    psi_points = np.asarray(psi_points, dtype=float)
    if psi_points.shape[-1] != 6:
        raise ValueError(f"expected 6 rotation coordinates, got {psi_points.shape[-1]}")
    return psi_to_quaternion(psi_points.reshape(psi_points.shape[:-1] + (2, 3)))


def psi_curve_to_quaternion_trajectory(curve, K: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Quaternion pairs (right, left) at ``K+1`` uniform knots of a 6-D curve."""
    if curve.dim != 6:
        raise ValueError(f"rotation curve must have dimension 6, got {curve.dim}")
    tbars = np.arange(K + 1) / K
    psi = curve(tbars).T
    quats = psi_curve_to_quaternions(psi)
    return [(quats[i, 0], quats[i, 1]) for i in range(K + 1)]
