"""Frontier exploration over a tri-valued 2D occupancy grid.

The grid holds -1 (unknown), 0 (idle, traversable), 1 (occupied) per
cell over a fixed exploration boundary box. Lidar returns inside a
height slice mark their cells occupied; every return then carves the
2D ray from the robot toward it, turning unknown cells idle. Returns
outside the slice (ground, ceiling) still carve through their projected
path, which is what opens up empty areas where nothing else reflects.

Frontier candidates come from a random tree grown through idle space:
a growth segment that touches an unknown cell yields a candidate at the
last idle cell before the boundary. Candidate scoring trades
information gain against travel distance, optionally penalizing heading
changes relative to the previous exploration direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .geometry import Pose
from .local_grid import cell_count

Vec3 = np.ndarray

UNKNOWN = -1
IDLE = 0
OCCUPIED = 1


@dataclass(frozen=True)
class ExploreGridConfig:
    """Boundary box, resolution, and height slice of the 2D grid."""

    x_min: float = -25.0
    x_max: float = 25.0
    y_min: float = -25.0
    y_max: float = 25.0
    resolution: float = 0.1
    z_lo: float = 0.0
    z_hi: float = 2.0

    def __post_init__(self) -> None:
        if self.resolution <= 0 or not math.isfinite(self.resolution):
            raise ValueError("resolution must be positive and finite")
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("boundary box must have positive extent")
        if self.z_hi <= self.z_lo:
            raise ValueError("height slice must have positive extent")
        cell_count(self.x_max - self.x_min, self.resolution, "x extent")
        cell_count(self.y_max - self.y_min, self.resolution, "y extent")

    @property
    def nx(self) -> int:
        return cell_count(self.x_max - self.x_min, self.resolution, "x extent")

    @property
    def ny(self) -> int:
        return cell_count(self.y_max - self.y_min, self.resolution, "y extent")


@dataclass
class OccupancyGrid2D:
    config: ExploreGridConfig
    cells: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.cells is None:
            self.cells = np.full((self.config.nx, self.config.ny), UNKNOWN, dtype=np.int8)
        elif self.cells.shape != (self.config.nx, self.config.ny):
            raise ValueError("cell array does not match grid geometry")

    def world_to_cell(self, x: float, y: float) -> tuple[int, int] | None:
        cfg = self.config
        ix = math.floor((x - cfg.x_min) / cfg.resolution)
        iy = math.floor((y - cfg.y_min) / cfg.resolution)
        if 0 <= ix < cfg.nx and 0 <= iy < cfg.ny:
            return ix, iy
        return None

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        cfg = self.config
        return (
            cfg.x_min + (ix + 0.5) * cfg.resolution,
            cfg.y_min + (iy + 0.5) * cfg.resolution,
        )

    def unknown_count(self) -> int:
        return int(np.count_nonzero(self.cells == UNKNOWN))

    def known_fraction(self) -> float:
        return 1.0 - self.unknown_count() / self.cells.size

    def to_image(self) -> np.ndarray:
        """Grayscale view, top row at max y: unknown 128, idle 255, occupied 0."""
        img = np.empty((self.config.ny, self.config.nx), dtype=np.uint8)
        flipped = self.cells.T[::-1]
        img[flipped == UNKNOWN] = 128
        img[flipped == IDLE] = 255
        img[flipped == OCCUPIED] = 0
        return img

    def copy(self) -> "OccupancyGrid2D":
        return OccupancyGrid2D(self.config, self.cells.copy())


@njit(cache=True)
def _carve_rays(cells, ax, ay, targets):
    # 4-connected traversal from (ax, ay) toward each target cell; the
    # boundary-crossing comparison is exact integer arithmetic and steps
    # x first on corner ties. Unknown cells become idle; occupied cells
    # stop the ray.
    nx_grid, ny_grid = cells.shape
    if ax < 0 or ax >= nx_grid or ay < 0 or ay >= ny_grid:
        return
    for k in range(targets.shape[0]):
        tx = targets[k, 0]
        ty = targets[k, 1]
        if cells[ax, ay] == 1:
            break
        if cells[ax, ay] == -1:
            cells[ax, ay] = 0
        dx = abs(tx - ax)
        dy = abs(ty - ay)
        sx = 1 if tx >= ax else -1
        sy = 1 if ty >= ay else -1
        x, y = ax, ay
        ix = 0
        iy = 0
        while ix < dx or iy < dy:
            cross_x = (1 + 2 * ix) * dy
            cross_y = (1 + 2 * iy) * dx
            if cross_x <= cross_y:
                x += sx
                ix += 1
            else:
                y += sy
                iy += 1
            v = cells[x, y]
            if v == 1:
                break
            if v == -1:
                cells[x, y] = 0


@njit(cache=True)
def _steer_scan(cells, ax, ay, bx, by):
    """Scan the 4-connected chain from (ax, ay) to (bx, by).

    Returns (status, cx, cy): status 0 when every cell through the end
    is known-idle, 1 when an unknown cell was touched (cx, cy is the
    last idle cell before it), 2 when an occupied cell blocks the way.
    """
    dx = abs(bx - ax)
    dy = abs(by - ay)
    sx = 1 if bx >= ax else -1
    sy = 1 if by >= ay else -1
    x, y = ax, ay
    last_x, last_y = ax, ay
    ix = 0
    iy = 0
    while ix < dx or iy < dy:
        cross_x = (1 + 2 * ix) * dy
        cross_y = (1 + 2 * iy) * dx
        if cross_x <= cross_y:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        v = cells[x, y]
        if v == 1:
            return 2, last_x, last_y
        if v == -1:
            return 1, last_x, last_y
        last_x, last_y = x, y
    return 0, last_x, last_y


def _clip_to_box(origin, target, cfg: ExploreGridConfig):
    """Clip the segment origin->target to the boundary box (origin inside).

    Returns the clipped target point pulled a hair inside so that cell
    binning stays in range.
    """
    t_hi = 1.0
    dx = target[0] - origin[0]
    dy = target[1] - origin[1]
    eps = cfg.resolution * 1e-3
    for delta, o, lo, hi in (
        (dx, origin[0], cfg.x_min + eps, cfg.x_max - eps),
        (dy, origin[1], cfg.y_min + eps, cfg.y_max - eps),
    ):
        if delta > 0:
            t_hi = min(t_hi, (hi - o) / delta)
        elif delta < 0:
            t_hi = min(t_hi, (lo - o) / delta)
    t_hi = max(t_hi, 0.0)
    return origin[0] + t_hi * dx, origin[1] + t_hi * dy


def update_occupancy(
    grid: OccupancyGrid2D, points_world: np.ndarray, robot_pos: Vec3
) -> OccupancyGrid2D:
    """Fold one world-frame return set into the grid.

    Two phases: returns inside the height slice mark their cells
    occupied, then every return carves its 2D ray from the robot,
    turning unknown cells idle up to the first occupied cell. A ray
    clears cells only while it itself flies inside the height slice:
    the carve segment toward a return outside the slice is cut where
    the ray crosses the slice boundary, so e.g. a hit on an obstacle's
    base below the slice floor can never erase the obstacle's own
    footprint. Paths are clipped to the boundary box and the robot's
    own cell is carved idle.
    """
    pts = np.asarray(points_world, dtype=float).reshape(-1, 3)
    cfg = grid.config
    root = grid.world_to_cell(float(robot_pos[0]), float(robot_pos[1]))
    if root is None:
        return grid
    ax, ay = root
    z0 = float(robot_pos[2])
    carve_from_robot = cfg.z_lo <= z0 <= cfg.z_hi

    targets: list[tuple[int, int]] = []
    if len(pts):
        in_slice = (pts[:, 2] >= cfg.z_lo) & (pts[:, 2] <= cfg.z_hi)
        for p in pts[in_slice]:
            cell = grid.world_to_cell(p[0], p[1])
            if cell is None:
                if not carve_from_robot:
                    continue
                cx, cy = _clip_to_box(robot_pos, p, cfg)
                cell = grid.world_to_cell(cx, cy)
                if cell is None:
                    continue
                targets.append(cell)
                continue
            grid.cells[cell] = OCCUPIED
            if carve_from_robot:
                targets.append(cell)
        if carve_from_robot:
            for p in pts[~in_slice]:
                z1 = float(p[2])
                z_exit = cfg.z_lo if z1 < cfg.z_lo else cfg.z_hi
                t_exit = (z_exit - z0) / (z1 - z0)
                ex = robot_pos[0] + t_exit * (p[0] - robot_pos[0])
                ey = robot_pos[1] + t_exit * (p[1] - robot_pos[1])
                cell = grid.world_to_cell(ex, ey)
                if cell is None:
                    cx, cy = _clip_to_box(robot_pos, (ex, ey), cfg)
                    cell = grid.world_to_cell(cx, cy)
                if cell is not None:
                    targets.append(cell)

    if carve_from_robot:
        if targets:
            arr = np.unique(np.array(targets, dtype=np.int64), axis=0)
        else:
            arr = np.zeros((0, 2), dtype=np.int64)
        _carve_rays(grid.cells, ax, ay, arr)
        if grid.cells[ax, ay] == UNKNOWN:
            grid.cells[ax, ay] = IDLE
    return grid


@dataclass(frozen=True)
class FrontierCandidate:
    """Known/unknown boundary cell with its score ingredients."""

    position: np.ndarray
    info_gain: int
    distance: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))


@dataclass(frozen=True)
class RRTParams:
    step: float = 1.0
    iterations: int = 2000
    seed: int = 0
    clearance: float = 0.3
    known_window: float = 1.0
    known_fraction: float = 0.95
    info_radius: float = 3.0

    def __post_init__(self) -> None:
        if self.step <= 0 or self.iterations <= 0:
            raise ValueError("step and iterations must be positive")


def info_gain(grid: OccupancyGrid2D, x: float, y: float, radius: float) -> int:
    """Unknown-cell count within a disk around (x, y)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    cfg = grid.config
    res = cfg.resolution
    ix_lo = max(0, math.floor((x - radius - cfg.x_min) / res))
    ix_hi = min(cfg.nx, math.ceil((x + radius - cfg.x_min) / res) + 1)
    iy_lo = max(0, math.floor((y - radius - cfg.y_min) / res))
    iy_hi = min(cfg.ny, math.ceil((y + radius - cfg.y_min) / res) + 1)
    if ix_lo >= ix_hi or iy_lo >= iy_hi:
        return 0
    xs = cfg.x_min + (np.arange(ix_lo, ix_hi) + 0.5) * res
    ys = cfg.y_min + (np.arange(iy_lo, iy_hi) + 0.5) * res
    d2 = (xs[:, None] - x) ** 2 + (ys[None, :] - y) ** 2
    window = grid.cells[ix_lo:ix_hi, iy_lo:iy_hi]
    return int(np.count_nonzero((window == UNKNOWN) & (d2 <= radius * radius)))


def _window_known_fraction(grid: OccupancyGrid2D, x: float, y: float, radius: float) -> float:
    cfg = grid.config
    res = cfg.resolution
    ix_lo = max(0, math.floor((x - radius - cfg.x_min) / res))
    ix_hi = min(cfg.nx, math.ceil((x + radius - cfg.x_min) / res) + 1)
    iy_lo = max(0, math.floor((y - radius - cfg.y_min) / res))
    iy_hi = min(cfg.ny, math.ceil((y + radius - cfg.y_min) / res) + 1)
    xs = cfg.x_min + (np.arange(ix_lo, ix_hi) + 0.5) * res
    ys = cfg.y_min + (np.arange(iy_lo, iy_hi) + 0.5) * res
    d2 = (xs[:, None] - x) ** 2 + (ys[None, :] - y) ** 2
    mask = d2 <= radius * radius
    total = int(np.count_nonzero(mask))
    if total == 0:
        return 1.0
    window = grid.cells[ix_lo:ix_hi, iy_lo:iy_hi]
    unknown = int(np.count_nonzero((window == UNKNOWN) & mask))
    return 1.0 - unknown / total


def _near_occupied(grid: OccupancyGrid2D, ix: int, iy: int, clearance: float) -> bool:
    cfg = grid.config
    r = int(math.ceil(clearance / cfg.resolution))
    ix_lo, ix_hi = max(0, ix - r), min(cfg.nx, ix + r + 1)
    iy_lo, iy_hi = max(0, iy - r), min(cfg.ny, iy + r + 1)
    window = grid.cells[ix_lo:ix_hi, iy_lo:iy_hi]
    if not (window == OCCUPIED).any():
        return False
    dx = (np.arange(ix_lo, ix_hi) - ix)[:, None] * cfg.resolution
    dy = (np.arange(iy_lo, iy_hi) - iy)[None, :] * cfg.resolution
    d2 = dx * dx + dy * dy
    return bool(((window == OCCUPIED) & (d2 <= clearance * clearance)).any())


def rrt_detect_frontiers(
    grid: OccupancyGrid2D,
    robot_pos: Vec3,
    params: RRTParams,
    altitude: float = 1.0,
) -> list[FrontierCandidate]:
    """Grow a random tree through idle space and collect boundary cells.

    Each steering segment is scanned cell by cell; touching an unknown
    cell yields a candidate at the last idle cell. Candidates hugging an
    obstacle or sitting in an already well-known window are dropped.
    Deterministic for a fixed seed.
    """
    cfg = grid.config
    root = grid.world_to_cell(float(robot_pos[0]), float(robot_pos[1]))
    if root is None:
        return []
    rng = np.random.default_rng(params.seed)
    nodes = np.empty((params.iterations + 1, 2))
    nodes[0] = (float(robot_pos[0]), float(robot_pos[1]))
    n_nodes = 1

    seen_cells: set[tuple[int, int]] = set()
    candidates: list[FrontierCandidate] = []

    samples = np.column_stack(
        [
            rng.uniform(cfg.x_min, cfg.x_max, size=params.iterations),
            rng.uniform(cfg.y_min, cfg.y_max, size=params.iterations),
        ]
    )
    for k in range(params.iterations):
        sample = samples[k]
        deltas = nodes[:n_nodes] - sample
        nearest = int(np.argmin(np.einsum("ij,ij->i", deltas, deltas)))
        base = nodes[nearest]
        offset = sample - base
        dist = float(np.hypot(offset[0], offset[1]))
        if dist < 1e-9:
            continue
        reach = min(params.step, dist)
        target = base + offset * (reach / dist)
        a = grid.world_to_cell(base[0], base[1])
        b = grid.world_to_cell(target[0], target[1])
        if a is None or b is None:
            continue
        status, cx, cy = _steer_scan(grid.cells, a[0], a[1], b[0], b[1])
        if status == 0:
            nodes[n_nodes] = target
            n_nodes += 1
        elif status == 1:
            if (cx, cy) in seen_cells:
                continue
            seen_cells.add((cx, cy))
            if grid.cells[cx, cy] != IDLE:
                continue
            px, py = grid.cell_center(cx, cy)
            if _near_occupied(grid, cx, cy, params.clearance):
                continue
            if (
                _window_known_fraction(grid, px, py, params.known_window)
                >= params.known_fraction
            ):
                continue
            gain = info_gain(grid, px, py, params.info_radius)
            dist_robot = float(
                np.hypot(px - float(robot_pos[0]), py - float(robot_pos[1]))
            )
            candidates.append(
                FrontierCandidate(
                    position=np.array([px, py, altitude]),
                    info_gain=gain,
                    distance=dist_robot,
                )
            )
    return candidates


@dataclass
class ExploreState:
    """Goal history, scoring weights, and the stop threshold."""

    lambda_info: float = 1.0
    lambda_dist: float = 3.0
    lambda_dir: float = 2.0
    theta_stop: int = 20
    prev_goal: np.ndarray | None = None
    prev_prev_goal: np.ndarray | None = None
    exploring: bool = True


def heading_angle(state: ExploreState, position: np.ndarray) -> float:
    """Angle between the last goal-to-goal leg and the leg to position.

    Zero until two goals exist or when either leg is degenerate.
    """
    if state.prev_goal is None or state.prev_prev_goal is None:
        return 0.0
    u = np.asarray(state.prev_goal)[:2] - np.asarray(state.prev_prev_goal)[:2]
    v = np.asarray(position)[:2] - np.asarray(state.prev_goal)[:2]
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu < 1e-9 or nv < 1e-9:
        return 0.0
    cosang = float(np.dot(u, v) / (nu * nv))
    return float(math.acos(min(1.0, max(-1.0, cosang))))


def revenue(candidate: FrontierCandidate, state: ExploreState, mode: str) -> float:
    """Candidate score: info gain versus distance, minus an exponential
    heading penalty in direction mode."""
    base = state.lambda_info * candidate.info_gain - state.lambda_dist * candidate.distance
    if mode == "baseline":
        return base
    if mode == "direction":
        angle = heading_angle(state, candidate.position)
        return base - math.exp(state.lambda_dir * angle)
    raise ValueError(f"unknown mode {mode!r}")


def select_goal(
    candidates: list[FrontierCandidate], state: ExploreState, mode: str
) -> FrontierCandidate:
    """Highest-revenue candidate; ties prefer nearer, then lexicographic.

    Shifts the goal history so the next selection's heading penalty is
    measured from this choice.
    """
    if not candidates:
        raise ValueError("no candidates to select from")
    best = None
    best_key = None
    for cand in candidates:
        score = revenue(cand, state, mode)
        key = (-score, cand.distance, tuple(cand.position))
        if best_key is None or key < best_key:
            best, best_key = cand, key
    state.prev_prev_goal = state.prev_goal
    state.prev_goal = np.asarray(best.position, dtype=float).copy()
    return best


def stop_check(candidates: list[FrontierCandidate], theta_stop: int) -> bool:
    """Stop when no candidates remain or none has enough unknown nearby."""
    if not candidates:
        return True
    return max(c.info_gain for c in candidates) < theta_stop


class GlobalCloudMap:
    """World-frame point accumulator with voxel deduplication.

    The first point to land in a voxel is kept; insertion order is
    preserved so exports are deterministic.
    """

    def __init__(self, resolution: float = 0.1) -> None:
        if resolution <= 0:
            raise ValueError("resolution must be positive")
        self.resolution = resolution
        self._voxels: dict[tuple[int, int, int], np.ndarray] = {}

    def accumulate(
        self, points_sensor: np.ndarray, pose: Pose, extrinsic: Pose | None = None
    ) -> None:
        pts = np.asarray(points_sensor, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            return
        if extrinsic is not None:
            pts = extrinsic.apply(pts)
        world = pose.apply(pts)
        keys = np.floor(world / self.resolution).astype(np.int64)
        for key, p in zip(map(tuple, keys), world):
            if key not in self._voxels:
                self._voxels[key] = p

    @property
    def n_points(self) -> int:
        return len(self._voxels)

    def points(self) -> np.ndarray:
        if not self._voxels:
            return np.zeros((0, 3))
        return np.array(list(self._voxels.values()))
