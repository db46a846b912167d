"""Bezier curves in Bernstein form.

Control points are stored column-wise in a ``d x (N+1)`` matrix. Curves are
parameterized by normalized time ``tbar = (t - t0) / T`` in ``[0, 1]``; the
derivative helpers return derivatives with respect to real time ``t``.

Evaluation accepts either plain arrays or :class:`bezier_mpc.ad.Dual` control
points, which lets the solvers differentiate through the curve.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

MAX_DEGREE = 16


class CurveError(ValueError):
    """Invalid control points or evaluation request."""


class DegreeTooLowError(CurveError):
    pass


_BINOMIALS = [np.array([comb(n, j) for j in range(n + 1)], dtype=float)
              for n in range(MAX_DEGREE + 1)]


def binomials(degree: int) -> np.ndarray:
    if not 0 <= degree <= MAX_DEGREE:
        raise CurveError(f"degree {degree} outside [0, {MAX_DEGREE}]")
    return _BINOMIALS[degree]


def _check_tbar(tbar):
    t = np.asarray(tbar, dtype=float)
    if not np.all(np.isfinite(t)) or np.any(t < 0.0) or np.any(t > 1.0):
        raise CurveError(f"normalized time outside [0, 1]: {tbar!r}")
    return t


def bernstein_basis(degree: int, tbar) -> np.ndarray:
    """Bernstein weights, shape ``(len(tbar), degree+1)`` (or ``(degree+1,)``)."""
    t = _check_tbar(tbar)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)[:, None]
    j = np.arange(degree + 1)
    basis = binomials(degree) * t**j * (1.0 - t) ** (degree - j)
    return basis[0] if scalar else basis


def as_control_points(points) -> np.ndarray:
    """Validate and return a float ``d x (N+1)`` control-point matrix."""
    E = np.array(points, dtype=float)
    if E.ndim == 1:
        E = E[None, :]
    if E.ndim != 2:
        raise CurveError(f"control points must be a matrix, got shape {E.shape}")
    if E.shape[1] < 2:
        raise CurveError("a curve needs at least two control points")
    if E.shape[1] - 1 > MAX_DEGREE:
        raise CurveError(f"degree {E.shape[1] - 1} exceeds cap {MAX_DEGREE}")
    if not np.all(np.isfinite(E)):
        raise CurveError("control points contain non-finite entries")
    return E


def derivative_control_points(E, horizon: float, order: int = 1):
    """Control points of the time derivative curve of a Bezier curve.

    ``order=1`` gives ``N/T (E[j+1] - E[j])`` (N columns) and ``order=2``
    gives ``N(N-1)/T^2 (E[j+2] - 2E[j+1] + E[j])`` (N-1 columns). Works on
    arrays and on ``Dual`` matrices alike.
    """
    if horizon <= 0:
        raise CurveError("horizon must be positive")
    if not hasattr(E, "shape"):
        E = as_control_points(E)
    N = E.shape[-1] - 1
    if order == 1:
        if N < 1:
            raise DegreeTooLowError("first derivative needs N >= 1")
        return (N / horizon) * (E[:, 1:] - E[:, :-1])
    if order == 2:
        if N < 2:
            raise DegreeTooLowError("second derivative needs N >= 2")
        return (N * (N - 1) / horizon**2) * (E[:, 2:] - 2.0 * E[:, 1:-1] + E[:, :-2])
    raise CurveError(f"unsupported derivative order {order}")


def hull_bounds(E) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension min/max over control points; bounds the whole curve."""
    E = as_control_points(E)
    return E.min(axis=1), E.max(axis=1)


@dataclass(frozen=True)
class BezierCurve:
    control_points: np.ndarray
    horizon: float = 1.0
    t0: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "control_points", as_control_points(self.control_points))
        if not (np.isfinite(self.horizon) and self.horizon > 0):
            raise CurveError("horizon must be positive and finite")
        self.control_points.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.control_points.shape[0]

    @property
    def degree(self) -> int:
        return self.control_points.shape[1] - 1

    def tbar(self, t: float) -> float:
        tb = (t - self.t0) / self.horizon
        _check_tbar(tb)
        return tb

    def __call__(self, tbar):
        return evaluate(self.control_points, tbar)

    def derivative(self, order: int = 1) -> "BezierCurve":
        E = derivative_control_points(self.control_points, self.horizon, order)
        return BezierCurve(E, self.horizon, self.t0)

    def eval_derivative(self, tbar, order: int = 1):
        # a derivative of a low-degree curve may have a single control point
        return evaluate(derivative_control_points(self.control_points, self.horizon, order), tbar)

    def sample_knots(self, K: int) -> list[tuple[float, np.ndarray]]:
        return sample_knots(self, K)


def evaluate(E, tbar):
    """Evaluate control points ``E`` at ``tbar`` (scalar or 1-D array).

    Returns shape ``(d,)`` for scalar ``tbar`` and ``(d, len(tbar))`` otherwise.
    """
    if not hasattr(E, "shape"):
        E = as_control_points(E)
    B = bernstein_basis(E.shape[-1] - 1, tbar)
    return E @ B.T


def eval_derivative(curve: BezierCurve, tbar, order: int = 1):
    return curve.eval_derivative(tbar, order)


def sample_knots(curve: BezierCurve, K: int) -> list[tuple[float, np.ndarray]]:
    if K < 1:
        raise CurveError("knot count K must be >= 1")
    tbars = np.arange(K + 1) / K
    values = evaluate(curve.control_points, tbars)
    return [(float(t), values[:, i]) for i, t in enumerate(tbars)]


def de_casteljau(E, tbar: float) -> np.ndarray:
    """Reference evaluation by repeated linear interpolation."""
    pts = np.array(E, dtype=float)
    while pts.shape[1] > 1:
        pts = (1.0 - tbar) * pts[:, :-1] + tbar * pts[:, 1:]
    return pts[:, 0]
