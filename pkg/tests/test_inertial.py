"""Error-state transitions, high-rate integrator, undistortion.

The transition matrices are checked against central finite differences
of the discrete nominal propagation; the integrator against closed-form
kinematics.
"""

import numpy as np
import pytest

from skyscout.geometry import Pose, ortho_drift, so3_exp, so3_log
from skyscout.inertial import (
    BA,
    BG,
    GRAV,
    NA,
    NBA,
    NBG,
    NG,
    POS,
    STATE_DIM,
    TH,
    VEL,
    HighRatePropagator,
    NominalState,
    PoseTrack,
    gravity_seed,
    hf_step,
    inject_error,
    propagate_covariance,
    propagate_nominal,
    relative_sweep_poses,
    state_error,
    transition_approx,
    transition_exact,
    undistort_frame,
)
from skyscout.sensors import ImuSample, PointCloudFrame


def _random_state(rng) -> NominalState:
    return NominalState(
        so3_exp(rng.normal(size=3)),
        rng.normal(size=3),
        rng.normal(size=3),
        rng.normal(size=3) * 0.01,
        rng.normal(size=3) * 0.05,
        np.array([0.0, 0.0, -9.81]) + rng.normal(size=3) * 0.05,
    )


def _random_imu(rng, t=0.0) -> ImuSample:
    return ImuSample(t, rng.normal(size=3), rng.normal(size=3) * 2.0 + [0, 0, 9.81])


def _fd_jacobian(state, imu, dt, eps=1e-6):
    """Central finite differences of propagate_nominal over the 18
    error directions."""
    base = propagate_nominal(state, imu, dt)
    jac = np.zeros((STATE_DIM, STATE_DIM))
    for j in range(STATE_DIM):
        d = np.zeros(STATE_DIM)
        d[j] = eps
        plus = state_error(propagate_nominal(inject_error(state, d), imu, dt), base)
        minus = state_error(propagate_nominal(inject_error(state, -d), imu, dt), base)
        jac[:, j] = (plus - minus) / (2.0 * eps)
    return jac


# --- transition matrices ----------------------------------------------------


def test_transition_exact_zero_rate_blocks():
    state = NominalState.at_rest()
    imu = ImuSample(0.0, state.bias_gyro.copy(), np.array([0.0, 0.0, 9.81]))
    dt = 0.004
    f_x, f_w = transition_exact(state, imu, dt)
    assert np.allclose(f_x[TH, TH], np.eye(3), atol=0)
    assert np.allclose(f_x[TH, BG], -np.eye(3) * dt, atol=0)
    assert np.allclose(f_w[TH, NG], -np.eye(3) * dt, atol=0)


def test_transition_exact_matches_finite_differences():
    rng = np.random.default_rng(42)
    dt = 1e-3
    for _ in range(10):
        state = _random_state(rng)
        imu = _random_imu(rng)
        f_x, _ = transition_exact(state, imu, dt)
        fd = _fd_jacobian(state, imu, dt)
        assert np.max(np.abs(f_x - fd)) <= 1e-5


def test_transition_noise_injection_matches_f_w():
    rng = np.random.default_rng(7)
    dt = 1e-3
    eps = 1e-4
    for _ in range(5):
        state = _random_state(rng)
        imu = _random_imu(rng)
        _, f_w = transition_exact(state, imu, dt)
        n = rng.normal(size=12)
        noisy_imu = ImuSample(imu.t, imu.gyro - eps * n[NG], imu.accel - eps * n[NA])
        prop = propagate_nominal(state, noisy_imu, dt)
        prop = NominalState(
            prop.rot,
            prop.pos,
            prop.vel,
            prop.bias_gyro + eps * n[NBG] * dt,
            prop.bias_accel + eps * n[NBA] * dt,
            prop.gravity,
        )
        base = propagate_nominal(state, imu, dt)
        err = state_error(prop, base)
        assert np.linalg.norm(err - eps * (f_w @ n)) <= 100.0 * eps**2


def test_transition_rejects_non_finite():
    state = NominalState.at_rest()
    imu = ImuSample(0.0, np.array([np.nan, 0, 0]), np.zeros(3))
    with pytest.raises(ValueError):
        transition_exact(state, imu, 0.001)
    with pytest.raises(ValueError):
        transition_exact(state, ImuSample(0.0, np.zeros(3), np.zeros(3)), -0.1)


def test_transition_approx_equals_exact_at_dt_zero():
    rng = np.random.default_rng(3)
    state = _random_state(rng)
    imu = _random_imu(rng)
    fx_e, fw_e = transition_exact(state, imu, 0.0)
    fx_a, fw_a = transition_approx(state, imu, 0.0)
    assert np.array_equal(fx_e, fx_a)
    assert np.array_equal(fw_e, fw_a)


def test_transition_approx_velocity_row_identical():
    rng = np.random.default_rng(5)
    for _ in range(5):
        state = _random_state(rng)
        imu = _random_imu(rng)
        fx_e, _ = transition_exact(state, imu, 0.01)
        fx_a, _ = transition_approx(state, imu, 0.01)
        assert np.array_equal(fx_e[VEL, :], fx_a[VEL, :])


def _gyro_coupling_gap(state, imu, dt):
    """Max error between exact and approx over the attitude-row coupling
    blocks, the ones where approx replaces the integral Jacobian by I."""
    fx_e, fw_e = transition_exact(state, imu, dt)
    fx_a, fw_a = transition_approx(state, imu, dt)
    return max(
        np.max(np.abs(fx_e[TH, BG] - fx_a[TH, BG])),
        np.max(np.abs(fw_e[TH, NG] - fw_a[TH, NG])),
    )


def test_transition_approx_gyro_coupling_second_order():
    state = NominalState.at_rest()
    axis = np.array([1.0, 1.0, 1.0]) / np.sqrt(3.0)
    imu = ImuSample(0.0, axis, np.array([0.0, 0.0, 9.81]))  # |omega| = 1 rad/s
    dt = 1e-3
    gap = _gyro_coupling_gap(state, imu, dt)
    assert gap <= 1.0 * dt * dt
    ratio = gap / _gyro_coupling_gap(state, imu, dt / 2.0)
    assert 3.5 <= ratio <= 4.5


def test_covariance_propagation_stays_symmetric_psd():
    rng = np.random.default_rng(11)
    state = _random_state(rng)
    imu = _random_imu(rng)
    f_x, f_w = transition_exact(state, imu, 0.005)
    p = np.eye(STATE_DIM) * 1e-4
    q = np.eye(12) * 1e-6
    for _ in range(50):
        p = propagate_covariance(p, f_x, f_w, q)
    assert np.allclose(p, p.T, atol=1e-18)
    assert np.all(np.linalg.eigvalsh(p) > 0.0)


# --- high-rate integrator ---------------------------------------------------


def test_hf_static_hover_is_fixed_point():
    g_up = np.array([0.0, 0.0, 9.81])
    rot, pos, vel = np.eye(3), np.array([1.0, 2.0, 1.5]), np.zeros(3)
    for k in range(100):
        s0 = ImuSample(k * 0.005, np.zeros(3), g_up.copy())
        s1 = ImuSample((k + 1) * 0.005, np.zeros(3), g_up.copy())
        rot, pos, vel = hf_step(rot, pos, vel, np.zeros(3), g_up, s0, s1)
    assert np.allclose(pos, [1.0, 2.0, 1.5], atol=1e-12)
    assert np.allclose(vel, 0.0, atol=1e-12)
    assert np.allclose(rot, np.eye(3), atol=1e-12)


def test_hf_constant_accel_matches_closed_form():
    a = np.array([0.7, -0.3, 0.2])
    g_up = np.array([0.0, 0.0, 9.81])
    accel_m = a + g_up
    rot, pos, vel = np.eye(3), np.zeros(3), np.zeros(3)
    dt = 0.005
    n = 200
    for k in range(n):
        s0 = ImuSample(k * dt, np.zeros(3), accel_m.copy())
        s1 = ImuSample((k + 1) * dt, np.zeros(3), accel_m.copy())
        rot, pos, vel = hf_step(rot, pos, vel, np.zeros(3), g_up, s0, s1)
    t = n * dt
    assert np.max(np.abs(pos - 0.5 * a * t * t)) <= 1e-9
    assert np.max(np.abs(vel - a * t)) <= 1e-9


def test_hf_pure_rotation_yaw():
    g_up = np.array([0.0, 0.0, 9.81])
    w = np.array([0.0, 0.0, 1.0])
    rot, pos, vel = np.eye(3), np.zeros(3), np.zeros(3)
    dt = 0.005
    for k in range(200):
        s0 = ImuSample(k * dt, w.copy(), g_up.copy())
        s1 = ImuSample((k + 1) * dt, w.copy(), g_up.copy())
        rot, pos, vel = hf_step(rot, pos, vel, np.zeros(3), g_up, s0, s1)
    yaw = so3_log(rot)[2]
    assert abs(yaw - 1.0) <= 1e-6


def test_hf_rejects_non_increasing_time():
    g_up = np.array([0.0, 0.0, 9.81])
    s = ImuSample(0.0, np.zeros(3), g_up)
    with pytest.raises(ValueError):
        hf_step(np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3), g_up, s, s)


def test_gravity_seed_hover_and_degenerate():
    g_up = gravity_seed(np.eye(3), np.array([0.0, 0.0, 9.81]), 9.81)
    assert np.allclose(g_up, [0.0, 0.0, 9.81], atol=1e-12)
    with pytest.raises(ValueError):
        gravity_seed(np.eye(3), np.zeros(3), 9.81)


def test_hf_orthonormality_over_many_steps():
    rng = np.random.default_rng(31)
    g_up = np.array([0.0, 0.0, 9.81])
    rot, pos, vel = np.eye(3), np.zeros(3), np.zeros(3)
    prev = ImuSample(0.0, rng.normal(size=3), g_up + rng.normal(size=3) * 0.1)
    dt = 0.005
    for k in range(1, 100_001):
        curr = ImuSample(k * dt, rng.normal(size=3), g_up + rng.normal(size=3) * 0.1)
        rot, pos, vel = hf_step(rot, pos, vel, np.zeros(3), g_up, prev, curr)
        prev = curr
    assert ortho_drift(rot) <= 1e-9


def test_propagator_restart_and_track():
    prop = HighRatePropagator()
    prop.reset(Pose(np.eye(3), np.array([1.0, 0.0, 1.0])), t=0.0, velocity=[0.5, 0, 0])
    g_up = np.array([0.0, 0.0, 9.81])
    dt = 0.005
    for k in range(21):
        prop.step(ImuSample(k * dt, np.zeros(3), g_up.copy()))
    # constant velocity drift: p = p0 + v t
    assert np.allclose(prop.pos, [1.0 + 0.5 * 0.1, 0.0, 1.0], atol=1e-12)
    track = prop.pose_track()
    rots, trans = track.query(np.array([0.05]))
    assert np.allclose(trans[0], [1.025, 0.0, 1.0], atol=1e-9)
    prop.reset(Pose(np.eye(3), np.array([9.0, 9.0, 1.0])), t=0.105)
    assert np.allclose(prop.pos, [9.0, 9.0, 1.0])
    assert np.allclose(prop.vel, [0.5, 0.0, 0.0])  # velocity survives restart


# --- undistortion -----------------------------------------------------------


def _static_rel(n):
    return (
        np.broadcast_to(np.eye(3), (n, 3, 3)).copy(),
        np.zeros((n, 3)),
    )


def test_undistort_static_identity():
    pts = np.random.default_rng(0).normal(size=(40, 3))
    frame = PointCloudFrame(1.0, pts, np.linspace(0.0, 0.09, 40))
    out = undistort_frame(frame, _static_rel(40), Pose.identity())
    assert np.array_equal(out.points, pts)
    again = undistort_frame(out, _static_rel(40), Pose.identity())
    assert np.max(np.abs(again.points - pts)) <= 1e-12


def test_undistort_static_with_nontrivial_extrinsic():
    pts = np.random.default_rng(1).normal(size=(10, 3))
    frame = PointCloudFrame(0.5, pts, np.zeros(10))
    ext = Pose(so3_exp(np.array([0.1, -0.7, 0.4])), np.array([0.3, 0.0, -0.1]))
    out = undistort_frame(frame, _static_rel(10), ext)
    assert np.max(np.abs(out.points - pts)) <= 1e-12


def test_undistort_translating_sensor_hand_value():
    # world point seen from origin at offset 0 and from (1,0,0) at sweep end
    q = np.array([5.0, 2.0, 0.5])
    p_start = q.copy()  # sensor at origin
    p_end = q - np.array([1.0, 0.0, 0.0])
    frame = PointCloudFrame(0.1, np.stack([p_start, p_end]), np.array([0.0, 0.1]))
    rel = [
        Pose(np.eye(3), np.array([-1.0, 0.0, 0.0])),  # T_end^-1 T_start
        Pose.identity(),
    ]
    out = undistort_frame(frame, rel, Pose.identity())
    assert np.allclose(out.points[0], p_end, atol=1e-12)
    assert np.allclose(out.points[0], out.points[1], atol=1e-12)


def test_undistort_pose_count_mismatch_raises():
    frame = PointCloudFrame(0.0, np.zeros((3, 3)), np.zeros(3))
    with pytest.raises(ValueError):
        undistort_frame(frame, [Pose.identity()], Pose.identity())


def test_relative_sweep_poses_translating_track():
    ts = np.linspace(0.0, 0.1, 21)
    rots = np.broadcast_to(np.eye(3), (21, 3, 3)).copy()
    trans = np.stack([np.array([10.0 * t, 0.0, 0.0]) for t in ts])
    track = PoseTrack(ts, rots, trans)
    rel_r, rel_t = relative_sweep_poses(
        track, scan_end_t=0.1, offsets=np.array([0.0, 0.05, 0.1]), sweep_duration=0.1
    )
    assert np.allclose(rel_t[0], [-1.0, 0.0, 0.0], atol=1e-9)
    assert np.allclose(rel_t[1], [-0.5, 0.0, 0.0], atol=1e-9)
    assert np.allclose(rel_t[2], [0.0, 0.0, 0.0], atol=1e-9)


def test_pose_track_rotation_interpolation():
    ts = np.array([0.0, 1.0])
    rots = np.stack([np.eye(3), so3_exp(np.array([0.0, 0.0, 1.0]))])
    trans = np.zeros((2, 3))
    track = PoseTrack(ts, rots, trans)
    r, _ = track.query(np.array([0.5]))
    assert np.allclose(so3_log(r[0]), [0.0, 0.0, 0.5], atol=1e-9)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
