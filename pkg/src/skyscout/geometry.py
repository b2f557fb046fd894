"""Rotation and rigid-transform primitives used across the stack.

Rotations are stored as plain 3x3 numpy arrays. Vectors are shape (3,)
float arrays. Angles are radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Below this angle the closed forms are replaced by their Taylor series.
_SMALL_ANGLE = 1e-6
# Orthonormality drift beyond this triggers re-orthonormalization.
ORTHO_DRIFT_TOL = 1e-9


def hat(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix [v]x such that [v]x @ w == cross(v, w)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def vee(m: np.ndarray) -> np.ndarray:
    """Inverse of hat for skew-symmetric m."""
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(u: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector.

    Args:
        u: rotation vector, axis * angle [rad].

    Returns:
        3x3 rotation matrix.
    """
    u = np.asarray(u, dtype=float)
    theta = np.linalg.norm(u)
    k = hat(u)
    if theta < _SMALL_ANGLE:
        # Second-order series; remainder is O(theta^3).
        return np.eye(3) + k + 0.5 * (k @ k)
    s = np.sin(theta) / theta
    c = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + s * k + c * (k @ k)


def so3_log(rot: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix.

    Stable near zero (series) and near pi (axis recovered from R + I).
    The returned angle is in [0, pi].
    """
    cos_theta = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_theta)
    w = vee(rot - rot.T) / 2.0  # == sin(theta) * axis
    if theta < _SMALL_ANGLE:
        return w * (1.0 + theta * theta / 6.0)
    sin_theta = np.sin(theta)
    if sin_theta > _SMALL_ANGLE:
        return w * (theta / sin_theta)
    # Near pi: R + I == 2 a a^T for unit axis a.
    sym = rot + np.eye(3)
    col = int(np.argmax(np.diag(sym)))
    axis = sym[:, col]
    axis = axis / np.linalg.norm(axis)
    if np.dot(axis, w) < 0.0:  # keep the branch continuous with w
        axis = -axis
    return axis * theta


def so3_right_jacobian(u: np.ndarray) -> np.ndarray:
    """Right Jacobian A(u) of the rotation exponential.

    A(u) = I - (1-cos t)/t^2 [u]x + (t - sin t)/t^3 [u]x^2  with t = |u|,
    equal to the integral of exp(-s [u]x) over s in [0, 1]. Satisfies
    Exp(u + d) ~= Exp(u) Exp(A(u) d) to first order in d.
    """
    u = np.asarray(u, dtype=float)
    theta = np.linalg.norm(u)
    k = hat(u)
    if theta < _SMALL_ANGLE:
        return np.eye(3) - 0.5 * k + (k @ k) / 6.0
    t2 = theta * theta
    c1 = (1.0 - np.cos(theta)) / t2
    c2 = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) - c1 * k + c2 * (k @ k)


def ortho_drift(rot: np.ndarray) -> float:
    """Max absolute deviation of rot^T rot from identity."""
    return float(np.max(np.abs(rot.T @ rot - np.eye(3))))


def orthonormalize(rot: np.ndarray) -> np.ndarray:
    """Nearest rotation matrix in the Frobenius sense (polar factor)."""
    u, _, vt = np.linalg.svd(rot)
    r = u @ vt
    if np.linalg.det(r) < 0.0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def renormalized(rot: np.ndarray) -> np.ndarray:
    """Return rot, re-orthonormalized only when drift exceeds tolerance."""
    if ortho_drift(rot) > ORTHO_DRIFT_TOL:
        return orthonormalize(rot)
    return rot


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world point = rot @ local point + trans."""

    rot: np.ndarray
    trans: np.ndarray

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            renormalized(self.rot @ other.rot),
            self.rot @ other.trans + self.trans,
        )

    def inverse(self) -> "Pose":
        rt = self.rot.T
        return Pose(rt.copy(), -(rt @ self.trans))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or a batch (N, 3)."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            return self.rot @ points + self.trans
        return points @ self.rot.T + self.trans


def interpolate_pose(a: Pose, b: Pose, s: float) -> Pose:
    """Pose between a (s=0) and b (s=1): linear in translation, geodesic
    in rotation."""
    rel = so3_log(a.rot.T @ b.rot)
    return Pose(
        a.rot @ so3_exp(s * rel),
        (1.0 - s) * a.trans + s * b.trans,
    )
