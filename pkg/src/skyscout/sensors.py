"""Sensor models: rotating-scan LiDAR, IMU sampling, noisy pose feed.

The LiDAR sweeps azimuth over one period, so per-point sample times are
linear in azimuth; feeding per-azimuth poses reproduces real in-sweep
motion distortion. Range noise is clipped at three sigma, which keeps
every return within a known band of the true surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .geometry import Pose, so3_exp
from .scene import Scene


@dataclass(frozen=True)
class LidarSpec:
    h_fov_deg: float = 360.0
    v_fov_deg: float = 59.0
    n_azimuth: int = 180
    n_elevation: int = 16
    max_range: float = 40.0  # [m]
    rate: float = 10.0  # [Hz]
    noise_sigma: float = 0.02  # [m], clipped at 3 sigma

    def __post_init__(self):
        if not (0.0 < self.v_fov_deg <= 180.0):
            raise ValueError("v_fov_deg must be in (0, 180]")
        if self.n_azimuth < 1 or self.n_elevation < 1:
            raise ValueError("ray counts must be >= 1")
        if self.max_range <= 0.0:
            raise ValueError("max_range must be positive")


@dataclass(frozen=True)
class ImuSpec:
    rate: float = 200.0  # [Hz]
    gyro_sigma: float = 0.0  # [rad/s] per sample
    accel_sigma: float = 0.0  # [m/s^2] per sample
    bias_omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_accel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    gravity_magnitude: float = 9.81  # [m/s^2]

    def __post_init__(self):
        if self.rate <= 0.0:
            raise ValueError("rate must be positive")
        if self.gravity_magnitude <= 0.0:
            raise ValueError("gravity_magnitude must be positive")


@dataclass(frozen=True)
class ImuSample:
    t: float  # [s]
    gyro: np.ndarray  # (3,) [rad/s], body frame
    accel: np.ndarray  # (3,) [m/s^2], body frame specific force


@dataclass(frozen=True)
class PointCloudFrame:
    """One sweep of returns, points in the sensor frame at their sample
    times, offsets measured from sweep start."""

    timestamp: float  # [s], sweep end
    points: np.ndarray  # (N, 3) [m]
    offsets: np.ndarray  # (N,) [s], in [0, 1/rate)


def ray_directions(spec: LidarSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sensor-frame unit directions and per-ray sweep offsets.

    Returns:
        dirs: (n_azimuth * n_elevation, 3), azimuth-major.
        offsets: matching (N,) sample offsets, linear in azimuth.
    """
    az = 2.0 * np.pi * np.arange(spec.n_azimuth) / spec.n_azimuth
    half_v = np.deg2rad(spec.v_fov_deg) / 2.0
    if spec.n_elevation == 1:
        el = np.array([0.0])
    else:
        el = np.linspace(-half_v, half_v, spec.n_elevation)
    az_g, el_g = np.meshgrid(az, el, indexing="ij")
    dirs = np.stack(
        [
            np.cos(el_g) * np.cos(az_g),
            np.cos(el_g) * np.sin(az_g),
            np.sin(el_g),
        ],
        axis=-1,
    ).reshape(-1, 3)
    sweep = 1.0 / spec.rate
    offsets = np.repeat(az_g[:, 0] / (2.0 * np.pi) * sweep, spec.n_elevation)
    return dirs, offsets


def lidar_scan(
    scene: Scene,
    pose: Pose,
    spec: LidarSpec,
    seed: int,
    timestamp: float = 0.0,
    sweep_poses: Sequence[Pose] | None = None,
) -> PointCloudFrame:
    """Raycast one sweep; nearest hit per ray plus clipped range noise.

    Args:
        pose: sensor pose at sweep end (also used for every ray when
            sweep_poses is None).
        sweep_poses: optional per-azimuth poses (len n_azimuth) sampled
            at each column's offset time, for in-sweep motion.

    Returns:
        Frame with misses omitted; points are in the sensor frame at
        their own sample times.
    """
    dirs_sensor, offsets = ray_directions(spec)
    n = len(dirs_sensor)
    if sweep_poses is None:
        origins = np.broadcast_to(pose.trans, (n, 3))
        dirs_world = dirs_sensor @ pose.rot.T
    else:
        if len(sweep_poses) != spec.n_azimuth:
            raise ValueError("sweep_poses must provide one pose per azimuth")
        rot_stack = np.stack([p.rot for p in sweep_poses])
        trans_stack = np.stack([p.trans for p in sweep_poses])
        rep = np.repeat(np.arange(spec.n_azimuth), spec.n_elevation)
        origins = trans_stack[rep]
        dirs_world = np.einsum("nij,nj->ni", rot_stack[rep], dirs_sensor)

    t_hit = scene.raycast(origins, dirs_world)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, spec.noise_sigma, size=n)
    noise = np.clip(noise, -3.0 * spec.noise_sigma, 3.0 * spec.noise_sigma)

    hit = np.isfinite(t_hit) & (t_hit + noise <= spec.max_range)
    ranges = np.maximum(t_hit[hit] + noise[hit], 0.0)
    points = dirs_sensor[hit] * ranges[:, None]
    return PointCloudFrame(timestamp, points, offsets[hit])


# --- analytic trajectories for sensor-stream tests -----------------------


class HoverTrajectory:
    """Static pose, identity attitude."""

    def __init__(self, position):
        self._p = np.asarray(position, dtype=float)

    def pose(self, t: float) -> Pose:
        return Pose(np.eye(3), self._p.copy())

    def velocity(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def acceleration(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def body_rates(self, t: float) -> np.ndarray:
        return np.zeros(3)


class ConstAccelTrajectory:
    """Uniform acceleration from rest or an initial velocity, identity
    attitude."""

    def __init__(self, p0, v0, accel):
        self._p0 = np.asarray(p0, dtype=float)
        self._v0 = np.asarray(v0, dtype=float)
        self._a = np.asarray(accel, dtype=float)

    def pose(self, t: float) -> Pose:
        return Pose(np.eye(3), self._p0 + self._v0 * t + 0.5 * self._a * t * t)

    def velocity(self, t: float) -> np.ndarray:
        return self._v0 + self._a * t

    def acceleration(self, t: float) -> np.ndarray:
        return self._a.copy()

    def body_rates(self, t: float) -> np.ndarray:
        return np.zeros(3)


class CircleTrajectory:
    """Horizontal circle at constant angular rate, identity attitude."""

    def __init__(self, center, radius: float, omega: float, z: float):
        self._c = np.asarray(center, dtype=float)
        self._r = float(radius)
        self._w = float(omega)
        self._z = float(z)

    def pose(self, t: float) -> Pose:
        a = self._w * t
        p = np.array(
            [
                self._c[0] + self._r * np.cos(a),
                self._c[1] + self._r * np.sin(a),
                self._z,
            ]
        )
        return Pose(np.eye(3), p)

    def velocity(self, t: float) -> np.ndarray:
        a = self._w * t
        return self._r * self._w * np.array([-np.sin(a), np.cos(a), 0.0])

    def acceleration(self, t: float) -> np.ndarray:
        a = self._w * t
        return -self._r * self._w**2 * np.array([np.cos(a), np.sin(a), 0.0])

    def body_rates(self, t: float) -> np.ndarray:
        return np.zeros(3)


class SpinTrajectory:
    """Fixed position, constant body-rate rotation."""

    def __init__(self, position, rates):
        self._p = np.asarray(position, dtype=float)
        self._w = np.asarray(rates, dtype=float)

    def pose(self, t: float) -> Pose:
        return Pose(so3_exp(self._w * t), self._p.copy())

    def velocity(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def acceleration(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def body_rates(self, t: float) -> np.ndarray:
        return self._w.copy()


def imu_stream(
    trajectory,
    spec: ImuSpec,
    seed: int,
    duration: float,
    t0: float = 0.0,
) -> list[ImuSample]:
    """Sample IMU readings along an analytic trajectory.

    accel = R^T (a_world + z_hat * G_m) + bias + noise; gyro = body
    rates + bias + noise. Samples land at t0 + k/rate, k = 0..N.
    """
    rng = np.random.default_rng(seed)
    dt = 1.0 / spec.rate
    n = int(round(duration * spec.rate))
    g_up = np.array([0.0, 0.0, spec.gravity_magnitude])
    out = []
    for k in range(n + 1):
        t = t0 + k * dt
        rot = trajectory.pose(t).rot
        accel = rot.T @ (trajectory.acceleration(t) + g_up)
        accel = accel + spec.bias_accel + rng.normal(0.0, spec.accel_sigma, 3)
        gyro = (
            trajectory.body_rates(t)
            + spec.bias_omega
            + rng.normal(0.0, spec.gyro_sigma, 3)
        )
        out.append(ImuSample(t, gyro, accel))
    return out


# --- pose feed (odometry stand-in) ---------------------------------------


@dataclass(frozen=True)
class PoseNoiseModel:
    sigma_pos: float = 0.0  # [m] per-axis
    sigma_rot: float = 0.0  # [rad] per-axis
    drift_rate: float = 0.0  # [m/s], linear in time along a seeded direction


class PoseFeed:
    """Noisy pose source standing in for an external odometry estimate.

    Deterministic in seed; the zero-noise model returns the true pose.
    Drift grows linearly in time along a direction fixed at seed time.
    """

    def __init__(self, model: PoseNoiseModel, seed: int):
        self.model = model
        self._rng = np.random.default_rng(seed)
        d = self._rng.normal(size=3)
        self._drift_dir = d / np.linalg.norm(d)

    def sample(self, true_pose: Pose, t: float) -> Pose:
        m = self.model
        if m.sigma_pos == 0.0 and m.sigma_rot == 0.0 and m.drift_rate == 0.0:
            return true_pose
        trans = true_pose.trans + m.drift_rate * t * self._drift_dir
        if m.sigma_pos > 0.0:
            trans = trans + self._rng.normal(0.0, m.sigma_pos, 3)
        rot = true_pose.rot
        if m.sigma_rot > 0.0:
            rot = rot @ so3_exp(self._rng.normal(0.0, m.sigma_rot, 3))
        return Pose(rot, trans)
