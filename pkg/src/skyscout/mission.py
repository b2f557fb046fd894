"""Episode orchestration: sense, map, pick frontiers, plan, track.

The simulation advances on a fixed base tick (the IMU rate); tracking,
collision checking, and lidar run on integer subdivisions. Everything
is seeded through one SeedSequence, so an episode is a pure function of
its config. The vehicle is a kinematic point with identity attitude:
flight dynamics add nothing to mapping/planning behavior and would drag
in unverifiable parameters.
"""

from __future__ import annotations

import dataclasses
import math
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .config import ScenarioConfig
from .exploration import (
    OCCUPIED,
    UNKNOWN,
    ExploreState,
    GlobalCloudMap,
    OccupancyGrid2D,
    RRTParams,
    heading_angle,
    info_gain,
    revenue,
    rrt_detect_frontiers,
    select_goal,
    stop_check,
    update_occupancy,
)
from .geometry import Pose
from .inertial import HighRatePropagator, relative_sweep_poses, undistort_frame
from .local_grid import LocalGridMap, rebuild_from_frames
from .scene import Scene
from .sensors import ImuSample, PoseFeed, lidar_scan, ray_directions
from .spline import UniformBspline, init_spline
from .trajopt import PlanningFailure, optimize

NO_FRONTIER = "no-frontier"
BELOW_THRESHOLD = "below-threshold"
BUDGET_EXCEEDED = "budget-exceeded"
FAILURE = "failure"

MAX_CONSECUTIVE_FAILURES = 5

# exploration is declared stalled when the unknown-cell count improves by
# fewer than STALL_MIN_CELLS over STALL_WINDOW_S of simulated time; the
# remaining candidates then only promise information that cannot be
# collected (shadowed pockets the sensor will never enter)
STALL_WINDOW_S = 20.0
STALL_MIN_CELLS = 5

_EYE3 = np.eye(3)


class OffsetGridView:
    """World-frame queries against a robot-centered grid snapshot."""

    def __init__(self, inner: LocalGridMap, center: np.ndarray):
        self.inner = inner
        self.center = np.asarray(center, dtype=float).copy()

    @property
    def config(self):
        return self.inner.config

    def is_occupied(self, p) -> bool:
        return self.inner.is_occupied(np.asarray(p, dtype=float) - self.center)

    def query_points(self, points: np.ndarray) -> np.ndarray:
        return self.inner.query_points(np.asarray(points, dtype=float) - self.center)


class Follower:
    """First-order velocity servo toward a moving target point."""

    def __init__(self, position, tau: float = 0.05, v_max: float = 2.0):
        self.pos = np.asarray(position, dtype=float).copy()
        self.vel = np.zeros(3)
        self.tau = float(tau)
        self.v_max = float(v_max)

    def command(self, target: np.ndarray, dt_cmd: float) -> None:
        err = target - self.pos
        v = err / max(self.tau, dt_cmd)
        speed = float(np.linalg.norm(v))
        if speed > self.v_max:
            v = v * (self.v_max / speed)
        self.vel = v

    def advance(self, dt: float) -> None:
        self.pos = self.pos + self.vel * dt


@dataclass
class ActivePlan:
    spline: UniformBspline
    t0: float

    def target(self, t: float) -> np.ndarray:
        return self.spline.evaluate(min(t - self.t0, self.spline.duration))

    def finished(self, t: float) -> bool:
        return t - self.t0 >= self.spline.duration

    def remaining_points(self, t: float, n: int = 64) -> np.ndarray:
        lo = min(max(t - self.t0, 0.0), self.spline.duration)
        ts = np.linspace(lo, self.spline.duration, n)
        return self.spline.evaluate(ts)


@dataclass
class GoalRecord:
    index: int
    t: float
    position: np.ndarray
    revenue: float
    info_gain: int
    distance: float
    heading: float
    kind: str  # "frontier" | "return"


@dataclass
class EpisodeMetrics:
    times: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    goal_ids: np.ndarray
    goals: list[GoalRecord]
    coverage_log: list[tuple[float, float]]
    path_length: float
    termination_reason: str
    entrapment_events: list[tuple[float, np.ndarray]]
    seed: int
    mode: str
    wallclock_s: float = 0.0

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "termination_reason": self.termination_reason,
            "goal_count": len(self.goals),
            "frontier_goal_count": sum(1 for g in self.goals if g.kind == "frontier"),
            "path_length_m": round(self.path_length, 6),
            "duration_s": round(float(self.times[-1]), 6) if len(self.times) else 0.0,
            "final_coverage": round(self.coverage_log[-1][1], 6)
            if self.coverage_log
            else 0.0,
            "coverage_over_time": [
                [round(t, 3), round(c, 6)] for t, c in self.coverage_log
            ],
            "mean_heading_change_rad": round(mean_heading_change(self.goals), 6),
            "entrapment_events": len(self.entrapment_events),
            "wallclock_s": round(self.wallclock_s, 3),
        }


@dataclass
class EpisodeResult:
    metrics: EpisodeMetrics
    cloud: GlobalCloudMap
    grid: OccupancyGrid2D
    scene: Scene
    snapshots: list[np.ndarray] = field(default_factory=list)


def mean_heading_change(goals: list[GoalRecord]) -> float:
    """Mean absolute angle between consecutive exploration goal legs."""
    pts = [g.position[:2] for g in goals if g.kind == "frontier"]
    if len(pts) < 3:
        return 0.0
    angles = []
    for a, b, c in zip(pts, pts[1:], pts[2:]):
        u, v = b - a, c - b
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu < 1e-9 or nv < 1e-9:
            continue
        cosang = float(np.dot(u, v) / (nu * nv))
        angles.append(math.acos(max(-1.0, min(1.0, cosang))))
    return float(np.mean(angles)) if angles else 0.0


def reachable_free_mask(scene: Scene, grid: OccupancyGrid2D, start_xy, altitude: float):
    """Cells free of true-scene matter at flight altitude and 4-connected
    to the start cell. The denominator for coverage."""
    cfg = grid.config
    xs = cfg.x_min + (np.arange(cfg.nx) + 0.5) * cfg.resolution
    ys = cfg.y_min + (np.arange(cfg.ny) + 0.5) * cfg.resolution
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.column_stack(
        [gx.ravel(), gy.ravel(), np.full(gx.size, float(altitude))]
    )
    free = (scene.signed_distance(pts) > 0.0).reshape(cfg.nx, cfg.ny)
    labels, _ = ndimage.label(free, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    cell = grid.world_to_cell(float(start_xy[0]), float(start_xy[1]))
    if cell is None or labels[cell] == 0:
        return free
    return labels == labels[cell]


def coverage_fraction(grid: OccupancyGrid2D, reachable: np.ndarray) -> float:
    total = int(np.count_nonzero(reachable))
    if total == 0:
        return 1.0
    known = int(np.count_nonzero((grid.cells != UNKNOWN) & reachable))
    return known / total


def clip_to_horizon(pos: np.ndarray, goal: np.ndarray, half_extents, margin: float):
    """Pull a goal inside the local planning box around pos."""
    d = goal - pos
    scale = 1.0
    for axis in range(3):
        limit = half_extents[axis] - margin
        if limit <= 0:
            continue
        if abs(d[axis]) > limit:
            scale = min(scale, limit / abs(d[axis]))
    return pos + scale * d


def _flight_slice(view: OffsetGridView) -> np.ndarray:
    """Occupancy of the local grid layer at the robot's own height."""
    c = view.config
    cells = view.inner.cells.reshape(c.num_h, c.num_w, c.num_l)
    return cells[c.num_h // 2]


def _slice_cell(view: OffsetGridView, p: np.ndarray) -> tuple[int, int] | None:
    c = view.config
    w = math.floor((p[0] - view.center[0]) / c.cell_size) + c.num_w // 2
    l = math.floor((p[1] - view.center[1]) / c.cell_size) + c.num_l // 2
    if 0 <= w < c.num_w and 0 <= l < c.num_l:
        return w, l
    return None


def _slice_center(view: OffsetGridView, w: int, l: int, z: float) -> np.ndarray:
    c = view.config
    return np.array(
        [
            view.center[0] + (w - c.num_w // 2 + 0.5) * c.cell_size,
            view.center[1] + (l - c.num_l // 2 + 0.5) * c.cell_size,
            z,
        ]
    )


def _nearest_free_in_slice(occ: np.ndarray, cell, max_rings: int = 8):
    """Closest free cell by expanding Chebyshev rings; None when boxed in."""
    w0, l0 = cell
    if occ[w0, l0] == 0:
        return cell
    nw, nl = occ.shape
    for r in range(1, max_rings + 1):
        best = None
        best_d2 = None
        for dw in range(-r, r + 1):
            for dl in range(-r, r + 1):
                if max(abs(dw), abs(dl)) != r:
                    continue
                w, l = w0 + dw, l0 + dl
                if 0 <= w < nw and 0 <= l < nl and occ[w, l] == 0:
                    d2 = dw * dw + dl * dl
                    if best_d2 is None or d2 < best_d2 or (
                        d2 == best_d2 and (dw, dl) < best
                    ):
                        best = (dw, dl)
                        best_d2 = d2
        if best is not None:
            return w0 + best[0], l0 + best[1]
    return None


def _bfs_corridor(occ: np.ndarray, start, goal):
    """4-connected shortest cell path through free space, or None."""
    nw, nl = occ.shape
    parent = np.full((nw, nl, 2), -1, dtype=np.int32)
    seen = np.zeros((nw, nl), dtype=bool)
    q = deque([start])
    seen[start] = True
    while q:
        w, l = q.popleft()
        if (w, l) == tuple(goal):
            path = [(w, l)]
            while (w, l) != tuple(start):
                w, l = parent[w, l]
                path.append((int(w), int(l)))
            path.reverse()
            return path
        for dw, dl in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            x, y = w + dw, l + dl
            if 0 <= x < nw and 0 <= y < nl and not seen[x, y] and occ[x, y] == 0:
                seen[x, y] = True
                parent[x, y] = (w, l)
                q.append((x, y))
    return None


def _corridor_waypoints(
    view: OffsetGridView, pos: np.ndarray, goal: np.ndarray
) -> np.ndarray | None:
    """World-frame polyline from pos to goal through free slice cells.

    The endpoints are nudged to the nearest free cell when they sit
    inside the padded obstacle set; returns None when no corridor
    exists.
    """
    occ = _flight_slice(view)
    a = _slice_cell(view, pos)
    b = _slice_cell(view, goal)
    if a is None or b is None:
        return None
    a = _nearest_free_in_slice(occ, a)
    b = _nearest_free_in_slice(occ, b)
    if a is None or b is None:
        return None
    path = _bfs_corridor(occ, a, b)
    if path is None:
        return None
    z = float(pos[2])
    way = [pos.copy()]
    way += [_slice_center(view, w, l, z) for w, l in path]
    way.append(_slice_center(view, b[0], b[1], float(goal[2])))
    return np.array(way)


def _resample_polyline(way: np.ndarray, n_pts: int) -> np.ndarray:
    seg = np.linalg.norm(np.diff(way, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    total = s[-1]
    if total <= 1e-9:
        return np.repeat(way[:1], n_pts, axis=0)
    targets = np.linspace(0.0, total, n_pts)
    return np.column_stack([np.interp(targets, s, way[:, j]) for j in range(3)])


def plan_leg(
    pos: np.ndarray,
    vel: np.ndarray,
    goal: np.ndarray,
    plan_view: OffsetGridView,
    watch_view: OffsetGridView,
    cfg: ScenarioConfig,
) -> UniformBspline:
    """Optimize one spline leg from the current state toward goal.

    The leg is shaped against a grid padded one cell beyond the watch
    grid, so small corner cuts of the optimized curve still clear the
    inflation the collision watch checks. A straight-chord seed is
    tried first; retries seed from a BFS corridor through free cells
    with a stiffer collision weight. Raises PlanningFailure when no
    clean leg comes out.
    """
    vel = np.asarray(vel, dtype=float)
    v_ref = 0.8 * cfg.cost.v_max

    def build(seed_pts: np.ndarray) -> UniformBspline:
        spl = UniformBspline(seed_pts, cfg.knot_dt)
        pts = spl.control_points.copy()
        pts[1] = pts[0] + vel * cfg.knot_dt / 3.0
        return spl.with_control_points(pts)

    def chord_seed() -> UniformBspline:
        dist = float(np.linalg.norm(goal - pos))
        n_seg = max(3, math.ceil(dist / max(v_ref * cfg.knot_dt, 1e-6)))
        return build(init_spline(pos, goal, min(n_seg + 3, 40), cfg.knot_dt).control_points)

    def corridor_seed() -> UniformBspline | None:
        # dense control points (~2.5 cells apart) so chords between them
        # cannot cut corners of the 4-connected corridor; the leg flies
        # slower through clutter as a side effect
        way = _corridor_waypoints(plan_view, pos, goal)
        if way is None:
            return None
        length = float(np.linalg.norm(np.diff(way, axis=0), axis=1).sum())
        spacing = 2.5 * cfg.local_grid.cell_size
        n_pts = int(np.clip(math.ceil(length / spacing) + 3, 4, 100))
        return build(_resample_polyline(way, n_pts))

    # skip post-check samples right at the start when the robot itself
    # stands inside the inflated set, so it can still fly out
    def clean(spline: UniformBspline) -> bool:
        ts = np.linspace(0.0, spline.duration, 20 * len(spline.control_points))
        samples = spline.evaluate(ts)
        hits = watch_view.query_points(samples)
        if watch_view.is_occupied(pos):
            arc = np.linalg.norm(samples - pos, axis=1)
            hits = hits & (arc > 2.0 * cfg.local_grid.inflation)
        return not hits.any()

    # flight happens in a fixed-altitude slice; collapse any vertical
    # wander the optimizer introduced back to a straight altitude ramp
    def planarize(spline: UniformBspline) -> UniformBspline:
        pts = spline.control_points.copy()
        pts[:, 2] = np.linspace(pos[2], goal[2], len(pts))
        flat = spline.with_control_points(pts)
        return flat if clean(flat) else spline

    # dense corridor legs fly slowly (speed ~ spacing / knot_dt); thin a
    # clean leg back to cruise spacing when the thinned curve stays clean
    def decimate(spline: UniformBspline) -> UniformBspline:
        ts = np.linspace(0.0, spline.duration, 20 * len(spline.control_points))
        path = spline.evaluate(ts)
        length = float(np.linalg.norm(np.diff(path, axis=0), axis=1).sum())
        n_fast = max(4, math.ceil(length / max(v_ref * cfg.knot_dt, 1e-6)) + 3)
        if n_fast >= len(spline.control_points):
            return spline
        thin = build(_resample_polyline(path, n_fast))
        return thin if clean(thin) else spline

    attempts = [(chord_seed, 1.0), (corridor_seed, 10.0)]
    fallback: UniformBspline | None = None
    for seed_fn, scale in attempts:
        seed = seed_fn()
        if seed is None:
            continue
        if fallback is None and seed_fn is corridor_seed and clean(seed):
            fallback = seed
        weights = dataclasses.replace(
            cfg.cost, lambda_collision=cfg.cost.lambda_collision * scale
        )
        try:
            out = optimize(
                seed,
                plan_view,
                weights=weights,
                max_iters=120,
                tol=1e-5,
                freeze_start_velocity=True,
            )
        except PlanningFailure:
            continue
        if clean(out):
            return decimate(planarize(out))
    # a clean corridor polyline beats a smoother curve that clips cells
    if fallback is not None:
        return decimate(fallback)
    raise PlanningFailure("no collision-free leg toward goal")


def run_episode(cfg: ScenarioConfig) -> EpisodeResult:
    """Execute one exploration episode; pure function of the config."""
    t_wall = time.perf_counter()
    root = np.random.SeedSequence(cfg.seed)
    ss_scene, ss_lidar, ss_rrt, ss_feed, ss_imu = root.spawn(5)
    rng_lidar = np.random.default_rng(ss_lidar)
    rng_rrt = np.random.default_rng(ss_rrt)
    rng_imu = np.random.default_rng(ss_imu)

    scene = cfg.scene.build(seed=int(ss_scene.generate_state(1)[0] % (2**31)))
    grid2d = OccupancyGrid2D(cfg.boundary)
    cloud = GlobalCloudMap(0.1)
    explore_state = ExploreState(
        lambda_info=cfg.explore.lambda_info,
        lambda_dist=cfg.explore.lambda_dist,
        lambda_dir=cfg.explore.lambda_dir,
        theta_stop=cfg.explore.theta_stop,
    )
    start = np.array([cfg.start[0], cfg.start[1], cfg.altitude])
    follower = Follower(start, tau=0.05, v_max=cfg.cost.v_max)
    extrinsic = Pose.identity()

    hf = HighRatePropagator(gravity_magnitude=cfg.imu.gravity_magnitude)
    hf.reset(Pose(np.eye(3), start.copy()), 0.0, velocity=np.zeros(3))
    feed = PoseFeed(cfg.pose_noise, seed=int(ss_feed.generate_state(1)[0] % (2**31)))

    dt_base = 1.0 / cfg.rates.imu_hz
    track_div = cfg.rates.divisor(cfg.rates.track_hz)
    collision_div = cfg.rates.divisor(cfg.rates.collision_hz)
    lidar_div = cfg.rates.divisor(cfg.rates.lidar_hz)
    dt_track = track_div * dt_base
    sweep_dur = 1.0 / cfg.rates.lidar_hz
    az_offsets = ray_directions(cfg.lidar)[1][:: cfg.lidar.n_elevation]
    cloud_every = max(1, int(round(cfg.rates.lidar_hz / 2.0)))  # accumulate at 2 Hz

    g_up = np.array([0.0, 0.0, cfg.imu.gravity_magnitude])
    reachable = reachable_free_mask(scene, grid2d, cfg.start, cfg.altitude)
    half_extents = (
        cfg.local_grid.length / 2.0,
        cfg.local_grid.width / 2.0,
        cfg.local_grid.height / 2.0,
    )
    horizon_margin = cfg.local_grid.inflation + 2.0 * cfg.local_grid.cell_size

    # rolling logs and state
    times, positions, velocities, goal_ids = [], [], [], []
    goals: list[GoalRecord] = []
    coverage_log: list[tuple[float, float]] = []
    entrapment: list[tuple[float, np.ndarray]] = []
    snapshots: list[np.ndarray] = []
    recent_world_pts: list[np.ndarray] = []
    true_hist_t: list[float] = [0.0]
    true_hist_p: list[np.ndarray] = [follower.pos.copy()]

    # the planner shapes legs against a grid padded one extra cell so
    # mild corner cuts still clear the inflation the watch checks
    plan_grid_cfg = dataclasses.replace(
        cfg.local_grid, inflation=cfg.local_grid.inflation + cfg.local_grid.cell_size
    )
    watch_view: OffsetGridView | None = None
    plan_view: OffsetGridView | None = None
    plan: ActivePlan | None = None
    goal: GoalRecord | None = None
    hold_point = start.copy()
    phase = "explore"
    reason = BUDGET_EXCEEDED
    consecutive_failures = 0
    path_length = 0.0
    prev_vel = np.zeros(3)
    prev_pos = follower.pos.copy()
    scan_count = 0

    def true_pose() -> Pose:
        return Pose(np.eye(3), follower.pos.copy())

    def log_track_tick(t: float) -> None:
        times.append(t)
        positions.append(follower.pos.copy())
        velocities.append(follower.vel.copy())
        goal_ids.append(goal.index if goal is not None else -1)

    def arrived(target3: np.ndarray) -> bool:
        return float(np.linalg.norm(follower.pos[:2] - target3[:2])) < cfg.goal_radius

    def try_plan(target3: np.ndarray, t: float) -> bool:
        """Plan toward target3 (clipped to the local horizon). Updates
        plan/hold on success, failure counter on failure."""
        nonlocal plan, hold_point, consecutive_failures
        if watch_view is None or plan_view is None:
            return False
        clipped = clip_to_horizon(follower.pos, target3, half_extents, horizon_margin)
        try:
            spl = plan_leg(follower.pos, follower.vel, clipped, plan_view, watch_view, cfg)
        except PlanningFailure:
            consecutive_failures += 1
            plan = None
            hold_point = follower.pos.copy()
            return False
        plan = ActivePlan(spl, t)
        consecutive_failures = 0
        return True

    unknown_hist: deque[tuple[float, int]] = deque()

    def exploration_stalled(t: float) -> bool:
        unknown_hist.append((t, grid2d.unknown_count()))
        while len(unknown_hist) > 1 and unknown_hist[1][0] <= t - STALL_WINDOW_S:
            unknown_hist.popleft()
        t0, u0 = unknown_hist[0]
        return t0 <= t - STALL_WINDOW_S and u0 - unknown_hist[-1][1] < STALL_MIN_CELLS

    def begin_return(stop_reason: str, t: float) -> None:
        nonlocal goal, plan, hold_point, phase, reason
        reason = stop_reason
        phase = "return"
        plan = None
        hold_point = follower.pos.copy()
        goal = GoalRecord(
            index=len(goals),
            t=t,
            position=start.copy(),
            revenue=0.0,
            info_gain=0,
            distance=float(np.linalg.norm(follower.pos[:2] - start[:2])),
            heading=0.0,
            kind="return",
        )
        goals.append(goal)
        snapshots.append(grid2d.to_image())
        if not cfg.return_to_start:
            phase = "done"
        else:
            try_plan(goal.position, t)

    n_ticks = int(round(cfg.budget_s * cfg.rates.imu_hz))
    log_track_tick(0.0)

    for k in range(1, n_ticks + 1):
        t = k * dt_base

        if k % track_div == 0:
            target = plan.target(t) if plan is not None else hold_point
            follower.command(target, dt_track)
        follower.advance(dt_base)
        true_hist_t.append(t)
        true_hist_p.append(follower.pos.copy())
        if len(true_hist_t) > 2 * lidar_div + 4:
            true_hist_t.pop(0)
            true_hist_p.pop(0)

        accel_world = (follower.vel - prev_vel) / dt_base
        prev_vel = follower.vel.copy()
        accel = accel_world + g_up
        gyro = np.zeros(3)
        if cfg.imu.accel_sigma > 0.0:
            accel = accel + rng_imu.normal(0.0, cfg.imu.accel_sigma, 3)
        if cfg.imu.gyro_sigma > 0.0:
            gyro = gyro + rng_imu.normal(0.0, cfg.imu.gyro_sigma, 3)
        hf.step(ImuSample(t, gyro, accel + cfg.imu.bias_accel))

        if k % track_div == 0:
            path_length += float(np.linalg.norm(follower.pos - prev_pos))
            prev_pos = follower.pos.copy()
            log_track_tick(t)

        if k % collision_div == 0 and plan is not None and watch_view is not None:
            if watch_view.is_occupied(follower.pos):
                entrapment.append((t, follower.pos.copy()))
            if watch_view.query_points(plan.remaining_points(t)).any():
                target3 = goal.position if goal is not None else start
                try_plan(target3, t)
                if consecutive_failures >= MAX_CONSECUTIVE_FAILURES:
                    reason = FAILURE
                    phase = "done"

        if k % lidar_div == 0 and phase != "done":
            scan_count += 1
            sweep_poses = None
            if true_hist_t[0] <= t - sweep_dur:
                ht = np.array(true_hist_t)
                hp = np.array(true_hist_p)
                t_az = t - sweep_dur + az_offsets
                interp = np.column_stack(
                    [np.interp(t_az, ht, hp[:, j]) for j in range(3)]
                )
                sweep_poses = [Pose(_EYE3, p) for p in interp]
            frame = lidar_scan(
                scene,
                true_pose().compose(extrinsic),
                cfg.lidar,
                seed=int(rng_lidar.integers(2**31)),
                timestamp=t,
                sweep_poses=sweep_poses,
            )
            rel = relative_sweep_poses(hf.pose_track(), t, frame.offsets, sweep_dur)
            und = undistort_frame(frame, rel, extrinsic)
            hf.reset(feed.sample(true_pose(), t), t, velocity=follower.vel)
            body = hf.pose()
            world_pts = body.compose(extrinsic).apply(und.points)

            update_occupancy(grid2d, world_pts, body.trans)
            if scan_count % cloud_every == 0:
                cloud.accumulate(und.points, body, extrinsic)
            coverage_log.append((t, coverage_fraction(grid2d, reachable)))

            recent_world_pts.append(world_pts)
            if len(recent_world_pts) > 3:
                recent_world_pts.pop(0)
            half = np.array(half_extents) + cfg.local_grid.inflation

            # occupied cells of the persistent 2D map near the robot,
            # lifted to the flight plane: surfaces mapped earlier must
            # stay in the collision model after they leave the
            # recent-scan window
            def mapped_obstacle_points() -> np.ndarray:
                c2 = grid2d.config
                res = c2.resolution
                i0 = max(0, math.floor((follower.pos[0] - half[0] - c2.x_min) / res))
                i1 = min(c2.nx, math.ceil((follower.pos[0] + half[0] - c2.x_min) / res))
                j0 = max(0, math.floor((follower.pos[1] - half[1] - c2.y_min) / res))
                j1 = min(c2.ny, math.ceil((follower.pos[1] + half[1] - c2.y_min) / res))
                if i0 >= i1 or j0 >= j1:
                    return np.empty((0, 3))
                ij = np.argwhere(grid2d.cells[i0:i1, j0:j1] == OCCUPIED)
                if len(ij) == 0:
                    return np.empty((0, 3))
                return np.column_stack(
                    [
                        c2.x_min + (ij[:, 0] + i0 + 0.5) * res,
                        c2.y_min + (ij[:, 1] + j0 + 0.5) * res,
                        np.full(len(ij), follower.pos[2]),
                    ]
                )

            rel_sets = []
            for pts in recent_world_pts + [mapped_obstacle_points()]:
                rel_pts = pts - follower.pos
                mask = (np.abs(rel_pts) <= half).all(axis=1)
                rel_sets.append(rel_pts[mask])
            watch_view = OffsetGridView(
                rebuild_from_frames(rel_sets, cfg.local_grid), follower.pos
            )
            plan_view = OffsetGridView(
                rebuild_from_frames(rel_sets, plan_grid_cfg), follower.pos
            )

            # goal management on the mapping cadence
            if phase == "explore":
                if exploration_stalled(t):
                    begin_return(BELOW_THRESHOLD, t)
                if phase == "explore" and goal is not None and arrived(goal.position):
                    goal = None
                    plan = None
                    hold_point = follower.pos.copy()
                # drop a frontier goal whose surroundings got mapped on
                # the way in; chasing it buys no more information
                if phase == "explore" and goal is not None and goal.kind == "frontier":
                    remaining = info_gain(
                        grid2d,
                        float(goal.position[0]),
                        float(goal.position[1]),
                        cfg.explore.info_radius,
                    )
                    if remaining < min(cfg.explore.theta_stop, 0.5 * goal.info_gain):
                        goal = None
                        plan = None
                        hold_point = follower.pos.copy()
                if phase == "explore" and goal is None:
                    params = RRTParams(
                        step=cfg.explore.rrt_step,
                        iterations=cfg.explore.rrt_iterations,
                        seed=int(rng_rrt.integers(2**31)),
                        clearance=cfg.explore.clearance,
                        known_window=cfg.explore.known_window,
                        known_fraction=cfg.explore.known_fraction,
                        info_radius=cfg.explore.info_radius,
                    )
                    cands = rrt_detect_frontiers(
                        grid2d, follower.pos, params, altitude=cfg.altitude
                    )
                    if stop_check(cands, cfg.explore.theta_stop):
                        begin_return(NO_FRONTIER if not cands else BELOW_THRESHOLD, t)
                    else:
                        state_before = dataclasses.replace(explore_state)
                        chosen = select_goal(cands, explore_state, cfg.mode)
                        goal = GoalRecord(
                            index=len(goals),
                            t=t,
                            position=chosen.position.copy(),
                            revenue=revenue(chosen, state_before, cfg.mode),
                            info_gain=chosen.info_gain,
                            distance=chosen.distance,
                            heading=heading_angle(state_before, chosen.position),
                            kind="frontier",
                        )
                        goals.append(goal)
                        snapshots.append(grid2d.to_image())
                        if not try_plan(goal.position, t):
                            goal = None
                elif phase == "explore" and (
                    plan is None or (plan.finished(t) and not arrived(goal.position))
                ):
                    if not try_plan(goal.position, t):
                        goal = None
                if consecutive_failures >= MAX_CONSECUTIVE_FAILURES:
                    reason = FAILURE
                    phase = "done"
            elif phase == "return":
                if arrived(start):
                    phase = "done"
                elif plan is None or (plan.finished(t) and not arrived(start)):
                    try_plan(start, t)
                    if consecutive_failures >= MAX_CONSECUTIVE_FAILURES:
                        reason = FAILURE
                        phase = "done"

        if phase == "done":
            break

    snapshots.append(grid2d.to_image())
    metrics = EpisodeMetrics(
        times=np.array(times),
        positions=np.array(positions),
        velocities=np.array(velocities),
        goal_ids=np.array(goal_ids, dtype=int),
        goals=goals,
        coverage_log=coverage_log,
        path_length=path_length,
        termination_reason=reason,
        entrapment_events=entrapment,
        seed=cfg.seed,
        mode=cfg.mode,
        wallclock_s=time.perf_counter() - t_wall,
    )
    return EpisodeResult(
        metrics=metrics, cloud=cloud, grid=grid2d, scene=scene, snapshots=snapshots
    )
