"""Clamped uniform cubic B-splines for local trajectories.

Control points live on a uniform knot grid with interval ``dt``; the end
knots are repeated so the curve interpolates the first and last control
point exactly. Derivative information used by the planner comes from
scaled control-point differences rather than from curve calculus, so the
planner cost is a function of the control polygon alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

DEGREE = 3


@dataclass(frozen=True)
class UniformBspline:
    """Cubic B-spline with clamped ends and uniform interior knots."""

    control_points: np.ndarray
    dt: float

    def __post_init__(self) -> None:
        pts = np.array(self.control_points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError("control points must be (N, 3)")
        if len(pts) < DEGREE + 1:
            raise ValueError("need at least 4 control points")
        if not np.isfinite(pts).all():
            raise ValueError("control points must be finite")
        if not (self.dt > 0 and np.isfinite(self.dt)):
            raise ValueError("knot interval must be positive")
        object.__setattr__(self, "control_points", pts)

    @property
    def n(self) -> int:
        return len(self.control_points)

    @property
    def duration(self) -> float:
        return (self.n - DEGREE) * self.dt

    def knots(self) -> np.ndarray:
        interior = np.arange(1, self.n - DEGREE) * self.dt
        return np.concatenate(
            [
                np.zeros(DEGREE + 1),
                interior,
                np.full(DEGREE + 1, self.duration),
            ]
        )

    def _basis(self) -> BSpline:
        return BSpline(self.knots(), self.control_points, DEGREE, extrapolate=False)

    def evaluate(self, t) -> np.ndarray:
        """Curve position at time t (scalar or array), clamped to the domain."""
        tq = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        return self._basis()(tq)

    def velocity(self, t) -> np.ndarray:
        tq = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        return self._basis().derivative(1)(tq)

    def acceleration(self, t) -> np.ndarray:
        tq = np.clip(np.asarray(t, dtype=float), 0.0, self.duration)
        return self._basis().derivative(2)(tq)

    def sample(self, rate: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Evaluate position and velocity on a fixed-rate time grid.

        The grid starts at 0 and always includes the final time, so the
        last row sits exactly on the goal.
        """
        if rate <= 0:
            raise ValueError("sample rate must be positive")
        n_step = int(np.floor(self.duration * rate + 1e-9))
        t = np.arange(n_step + 1) / rate
        if t[-1] < self.duration - 1e-12:
            t = np.append(t, self.duration)
        return t, self.evaluate(t), self.velocity(t)

    def with_control_points(self, points: np.ndarray) -> "UniformBspline":
        return UniformBspline(points, self.dt)


def init_spline(start, goal, n_points: int, dt: float) -> UniformBspline:
    """Straight-segment initialization with uniformly spaced control points.

    A coincident start and goal yields a stationary spline (all control
    points at the shared location).
    """
    if n_points < DEGREE + 1:
        raise ValueError("need at least 4 control points")
    start = np.asarray(start, dtype=float)
    goal = np.asarray(goal, dtype=float)
    return UniformBspline(np.linspace(start, goal, n_points, axis=0), dt)


def control_point_derivatives(
    points: np.ndarray, dt: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Velocity, acceleration, jerk control points as scaled differences.

    Works on any polygon with at least two points; higher differences
    come back empty when there are not enough points to form them.
    """
    pts = np.asarray(points, dtype=float)
    if len(pts) < 2:
        raise ValueError("need at least 2 points for differences")
    if dt <= 0:
        raise ValueError("knot interval must be positive")
    vel = np.diff(pts, axis=0) / dt
    acc = np.diff(vel, axis=0) / dt
    jerk = np.diff(acc, axis=0) / dt
    return vel, acc, jerk


def spline_derivatives(
    spline: UniformBspline,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return control_point_derivatives(spline.control_points, spline.dt)
