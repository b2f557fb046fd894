"""Inertial state propagation and motion-distortion compensation.

Covers three pieces: the 18-state error-transition matrices used for
covariance propagation, a high-rate attitude/position integrator that
bridges between anchor poses, and per-point undistortion that maps a
sweep's returns into its end frame.

Error-state block order (rows and columns of F_x):
    [d_theta, d_pos, d_vel, d_bias_gyro, d_bias_accel, d_gravity]
Noise block order (columns of F_w):
    [n_gyro, n_accel, n_bias_gyro, n_bias_accel]

The attitude error is right-multiplicative: rot_true = rot_nominal @
Exp(d_theta). Gravity in NominalState is the additive term of
v' = v + (R (a_m - b_a) + g) dt, so it points down at rest.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import (
    Pose,
    hat,
    renormalized,
    so3_exp,
    so3_log,
    so3_right_jacobian,
)
from .sensors import ImuSample, PointCloudFrame

# error-state block slices
TH = slice(0, 3)
POS = slice(3, 6)
VEL = slice(6, 9)
BG = slice(9, 12)
BA = slice(12, 15)
GRAV = slice(15, 18)
# noise block slices
NG = slice(0, 3)
NA = slice(3, 6)
NBG = slice(6, 9)
NBA = slice(9, 12)

STATE_DIM = 18
NOISE_DIM = 12


@dataclass(frozen=True)
class NominalState:
    """Propagated nominal state; gravity is the additive velocity term
    (points down at rest, |g| in [9.0, 10.5] in normal use)."""

    rot: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    bias_gyro: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -9.81]))

    @staticmethod
    def at_rest(pos=(0.0, 0.0, 0.0), gravity_magnitude: float = 9.81) -> "NominalState":
        return NominalState(
            np.eye(3),
            np.asarray(pos, dtype=float),
            np.zeros(3),
            gravity=np.array([0.0, 0.0, -gravity_magnitude]),
        )


def _check_finite(state: NominalState, imu: ImuSample, dt: float) -> None:
    if dt < 0.0 or not np.isfinite(dt):
        raise ValueError("dt must be non-negative and finite")
    for arr in (state.rot, state.pos, state.vel, state.bias_gyro,
                state.bias_accel, state.gravity, imu.gyro, imu.accel):
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite input to transition computation")


def propagate_nominal(state: NominalState, imu: ImuSample, dt: float) -> NominalState:
    """Discrete nominal propagation that the transition matrices
    linearize: R' = R Exp((w - bg) dt), p' = p + v dt,
    v' = v + (R (a - ba) + g) dt."""
    rot = renormalized(state.rot @ so3_exp((imu.gyro - state.bias_gyro) * dt))
    pos = state.pos + state.vel * dt
    vel = state.vel + (state.rot @ (imu.accel - state.bias_accel) + state.gravity) * dt
    return replace(state, rot=rot, pos=pos, vel=vel)


def transition_exact(
    state: NominalState, imu: ImuSample, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Exact error-state transition (F_x, F_w) about the nominal state.

    The gyro-coupling blocks carry the right Jacobian of the rotation
    increment, which is what the finite-difference Jacobian of
    propagate_nominal produces under the right-multiplicative error.
    """
    _check_finite(state, imu, dt)
    u = (imu.gyro - state.bias_gyro) * dt
    a_u = so3_right_jacobian(u)
    r_af = state.rot @ hat(imu.accel - state.bias_accel)

    f_x = np.eye(STATE_DIM)
    f_x[TH, TH] = so3_exp(-u)
    f_x[TH, BG] = -a_u * dt
    f_x[POS, VEL] = np.eye(3) * dt
    f_x[VEL, TH] = -r_af * dt
    f_x[VEL, BA] = -state.rot * dt
    f_x[VEL, GRAV] = np.eye(3) * dt

    f_w = np.zeros((STATE_DIM, NOISE_DIM))
    f_w[TH, NG] = -a_u * dt
    f_w[VEL, NA] = -state.rot * dt
    f_w[BG, NBG] = np.eye(3) * dt
    f_w[BA, NBA] = np.eye(3) * dt
    return f_x, f_w


def transition_approx(
    state: NominalState, imu: ImuSample, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """First-order variant: rotation and Jacobian blocks replaced by I."""
    f_x, f_w = transition_exact(state, imu, dt)
    f_x[TH, TH] = np.eye(3)
    f_x[TH, BG] = -np.eye(3) * dt
    f_w[TH, NG] = -np.eye(3) * dt
    return f_x, f_w


def propagate_covariance(
    p: np.ndarray, f_x: np.ndarray, f_w: np.ndarray, q: np.ndarray
) -> np.ndarray:
    """P <- F_x P F_x^T + F_w Q F_w^T (no measurement update)."""
    return f_x @ p @ f_x.T + f_w @ q @ f_w.T


def inject_error(state: NominalState, delta: np.ndarray) -> NominalState:
    """Apply an 18-dim error vector to a nominal state."""
    return NominalState(
        state.rot @ so3_exp(delta[TH]),
        state.pos + delta[POS],
        state.vel + delta[VEL],
        state.bias_gyro + delta[BG],
        state.bias_accel + delta[BA],
        state.gravity + delta[GRAV],
    )


def state_error(state: NominalState, reference: NominalState) -> np.ndarray:
    """Error of state about reference: inject_error(reference, result)
    reproduces state (to first order in the attitude block)."""
    delta = np.empty(STATE_DIM)
    delta[TH] = so3_log(reference.rot.T @ state.rot)
    delta[POS] = state.pos - reference.pos
    delta[VEL] = state.vel - reference.vel
    delta[BG] = state.bias_gyro - reference.bias_gyro
    delta[BA] = state.bias_accel - reference.bias_accel
    delta[GRAV] = state.gravity - reference.gravity
    return delta


# --- high-rate integrator -------------------------------------------------


def hf_step(
    rot: np.ndarray,
    pos: np.ndarray,
    vel: np.ndarray,
    bias_accel: np.ndarray,
    gravity_up: np.ndarray,
    imu_prev: ImuSample,
    imu_curr: ImuSample,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One trapezoidal integration step between consecutive IMU samples.

    gravity_up is the specific-force offset subtracted from rotated
    accelerometer readings ((0, 0, +G_m) at rest), so world
    acceleration a0 = R (a_prev - ba) - gravity_up.
    """
    dt = imu_curr.t - imu_prev.t
    if dt <= 0.0:
        raise ValueError("imu_curr must be later than imu_prev")
    a0 = rot @ (imu_prev.accel - bias_accel) - gravity_up
    w_mean = (imu_prev.gyro + imu_curr.gyro) / 2.0
    rot_next = renormalized(rot @ so3_exp(w_mean * dt))
    a1 = rot_next @ (imu_curr.accel - bias_accel) - gravity_up
    a_mean = (a0 + a1) / 2.0
    pos_next = pos + vel * dt + 0.5 * a_mean * dt * dt
    vel_next = vel + a_mean * dt
    return rot_next, pos_next, vel_next


def gravity_seed(rot: np.ndarray, accel_m: np.ndarray, gravity_magnitude: float) -> np.ndarray:
    """Upward specific-force offset seeded from one near-static sample.

    The body-frame gravity-normalized acceleration -a_m/|a_m| * G_m,
    rotated to world and negated, gives the offset the integrator
    subtracts. Degenerate samples (|a_m| ~ 0) are rejected.
    """
    norm = np.linalg.norm(accel_m)
    if norm < 1e-6:
        raise ValueError("degenerate accelerometer sample; gravity seed undefined")
    a_c = -accel_m / norm * gravity_magnitude
    return -(rot @ a_c)


class HighRatePropagator:
    """Streams IMU samples into a pose track between anchor updates.

    Holds mutable state (single writer). Poses are recorded per step so
    a sweep's per-point poses can be interpolated afterwards. reset()
    re-anchors position/attitude while keeping the velocity estimate,
    matching a 10 Hz anchor feed with a 200 Hz IMU.
    """

    def __init__(
        self,
        bias_accel=None,
        gravity_magnitude: float = 9.81,
        history_span: float = 0.5,
    ):
        self.bias_accel = (
            np.zeros(3) if bias_accel is None else np.asarray(bias_accel, dtype=float)
        )
        self.gravity_magnitude = float(gravity_magnitude)
        self.gravity_up = np.array([0.0, 0.0, gravity_magnitude])
        self.rot = np.eye(3)
        self.pos = np.zeros(3)
        self.vel = np.zeros(3)
        self._prev: ImuSample | None = None
        self._history: deque = deque()
        self._history_span = float(history_span)

    def reset(
        self,
        pose: Pose,
        t: float,
        velocity=None,
        seed_sample: ImuSample | None = None,
    ) -> None:
        """Re-anchor at a trusted pose; optionally re-seed gravity from
        a near-static IMU sample."""
        self.rot = pose.rot.copy()
        self.pos = pose.trans.copy()
        if velocity is not None:
            self.vel = np.asarray(velocity, dtype=float).copy()
        if seed_sample is not None:
            self.gravity_up = gravity_seed(
                self.rot, seed_sample.accel, self.gravity_magnitude
            )
        if self._prev is None or self._prev.t < t:
            self._record(t)

    def step(self, sample: ImuSample) -> None:
        if self._prev is not None:
            self.rot, self.pos, self.vel = hf_step(
                self.rot,
                self.pos,
                self.vel,
                self.bias_accel,
                self.gravity_up,
                self._prev,
                sample,
            )
        self._prev = sample
        self._record(sample.t)

    def pose(self) -> Pose:
        return Pose(self.rot.copy(), self.pos.copy())

    def _record(self, t: float) -> None:
        self._history.append((t, self.rot.copy(), self.pos.copy()))
        horizon = t - self._history_span
        while len(self._history) > 2 and self._history[0][0] < horizon:
            self._history.popleft()

    def pose_track(self) -> "PoseTrack":
        ts = np.array([h[0] for h in self._history])
        rots = np.stack([h[1] for h in self._history])
        trans = np.stack([h[2] for h in self._history])
        return PoseTrack(ts, rots, trans)


class PoseTrack:
    """Time-indexed pose samples with vectorized interpolation: linear
    in translation, geodesic in rotation."""

    def __init__(self, ts: np.ndarray, rots: np.ndarray, trans: np.ndarray):
        if len(ts) == 0:
            raise ValueError("empty pose track")
        self.ts = ts
        self.rots = rots
        self.trans = trans
        if len(ts) > 1:
            self._rel = np.stack(
                [so3_log(rots[i].T @ rots[i + 1]) for i in range(len(ts) - 1)]
            )
        else:
            self._rel = np.zeros((0, 3))

    def query(self, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Interpolated (rots (N,3,3), trans (N,3)) at given times;
        clamped to the track's span."""
        times = np.asarray(times, dtype=float)
        if len(self.ts) == 1:
            n = len(times)
            return (
                np.broadcast_to(self.rots[0], (n, 3, 3)).copy(),
                np.broadcast_to(self.trans[0], (n, 3)).copy(),
            )
        idx = np.clip(np.searchsorted(self.ts, times, side="right") - 1, 0, len(self.ts) - 2)
        t0 = self.ts[idx]
        t1 = self.ts[idx + 1]
        span = np.maximum(t1 - t0, 1e-12)
        s = np.clip((times - t0) / span, 0.0, 1.0)
        trans = (1.0 - s[:, None]) * self.trans[idx] + s[:, None] * self.trans[idx + 1]
        rots = np.einsum("nij,njk->nik", self.rots[idx], _exp_batch(s[:, None] * self._rel[idx]))
        return rots, trans


def _exp_batch(u: np.ndarray) -> np.ndarray:
    """Rodrigues exponential over a batch of rotation vectors (N, 3)."""
    theta = np.linalg.norm(u, axis=1)
    out = np.broadcast_to(np.eye(3), (len(u), 3, 3)).copy()
    k = np.zeros((len(u), 3, 3))
    k[:, 0, 1] = -u[:, 2]
    k[:, 0, 2] = u[:, 1]
    k[:, 1, 0] = u[:, 2]
    k[:, 1, 2] = -u[:, 0]
    k[:, 2, 0] = -u[:, 1]
    k[:, 2, 1] = u[:, 0]
    small = theta < 1e-6
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(small, 1.0, np.sin(theta) / np.where(small, 1.0, theta))
        c = np.where(small, 0.5, (1.0 - np.cos(theta)) / np.where(small, 1.0, theta**2))
    kk = np.einsum("nij,njk->nik", k, k)
    return out + s[:, None, None] * k + c[:, None, None] * kk


def relative_sweep_poses(
    track: PoseTrack, scan_end_t: float, offsets: np.ndarray, sweep_duration: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-point body poses relative to the sweep-end body frame.

    Point j sampled at scan_end_t - sweep_duration + offsets[j] gets
    T_end^-1 T_j as stacked (rots, trans).
    """
    times = scan_end_t - sweep_duration + np.asarray(offsets, dtype=float)
    rots, trans = track.query(times)
    rot_end, trans_end = track.query(np.array([scan_end_t]))
    r_inv = rot_end[0].T
    rel_rots = np.einsum("ij,njk->nik", r_inv, rots)
    rel_trans = (trans - trans_end[0]) @ r_inv.T
    return rel_rots, rel_trans


def undistort_frame(
    frame: PointCloudFrame,
    rel_poses,
    extrinsic: Pose,
) -> PointCloudFrame:
    """Map each return into the sweep-end sensor frame.

    Args:
        frame: raw sweep; point j is in the sensor frame at its own
            sample time.
        rel_poses: per-point body pose relative to the sweep-end body
            frame. Either a sequence of Pose (one per point) or a tuple
            of stacked arrays (rots (N,3,3), trans (N,3)).
        extrinsic: body-from-sensor transform.

    Returns:
        Frame with identical timestamps/offsets, points conjugated by
        extrinsic^-1 . rel_pose . extrinsic.

    Raises:
        ValueError: when the pose count does not match the point count.
    """
    n = len(frame.points)
    if isinstance(rel_poses, tuple):
        rots, trans = rel_poses
    else:
        if len(rel_poses) != n:
            raise ValueError("need one relative pose per point")
        if n == 0:
            return PointCloudFrame(frame.timestamp, frame.points.copy(), frame.offsets.copy())
        rots = np.stack([p.rot for p in rel_poses])
        trans = np.stack([p.trans for p in rel_poses])
    if len(rots) != n or len(trans) != n:
        raise ValueError("need one relative pose per point")
    if n == 0:
        return PointCloudFrame(frame.timestamp, frame.points.copy(), frame.offsets.copy())

    r_l = extrinsic.rot
    t_l = extrinsic.trans
    # sensor -> body, per-point body motion, body -> sensor
    body = frame.points @ r_l.T + t_l
    moved = np.einsum("nij,nj->ni", rots, body) + trans
    points = (moved - t_l) @ r_l
    return PointCloudFrame(frame.timestamp, points, frame.offsets.copy())
