"""Robot-centered occupancy grid with point inflation.

The grid is a dense uint8 array over a box of extent ``length`` x
``width`` x ``height`` meters centered on the robot, stored flat in
h-major, w-middle, l-minor order.  Axis pairing follows the index
convention used throughout: ``w`` indexes x, ``l`` indexes y, ``h``
indexes z.

Each inserted point marks a small lattice of cells around itself so that
obstacles are inflated by the planning margin.  The lattice points are
constructed and binned literally, point by point, because the floor
operation is not invariant under shifting by cell multiples in floating
point (e.g. ``floor(0.3/0.1) == 2`` but ``floor((0.3+0.1)/0.1) == 4``),
and cell membership must not depend on which arithmetic path produced a
lattice point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

Vec3 = np.ndarray

_MULTIPLE_TOL = 1e-6


def cell_count(extent: float, size: float, name: str) -> int:
    n = extent / size
    if not math.isfinite(n) or n <= 0:
        raise ValueError(f"{name} must be a positive multiple of cell size")
    rounded = round(n)
    if rounded <= 0 or abs(n - rounded) > _MULTIPLE_TOL:
        raise ValueError(
            f"{name}={extent} is not a positive multiple of cell size {size}"
        )
    return rounded


@dataclass(frozen=True)
class GridConfig:
    """Geometry of the local occupancy grid.

    Extents must be exact positive multiples of ``cell_size``; violations
    raise ValueError at construction.  ``inflation`` is the obstacle
    padding radius in meters, realized as a cell lattice around each
    inserted point.  The default lattice extends from the point outward
    by one inflation radius on the negative side of each axis (matching
    the asymmetric construction the index math produces); setting
    ``symmetric_inflation`` widens it to cover both sides.
    """

    length: float = 30.0
    width: float = 30.0
    height: float = 3.0
    cell_size: float = 0.1
    inflation: float = 0.5
    symmetric_inflation: bool = False

    def __post_init__(self) -> None:
        if self.cell_size <= 0 or not math.isfinite(self.cell_size):
            raise ValueError("cell_size must be positive and finite")
        if self.inflation < 0 or not math.isfinite(self.inflation):
            raise ValueError("inflation must be non-negative and finite")
        cell_count(self.length, self.cell_size, "length")
        cell_count(self.width, self.cell_size, "width")
        cell_count(self.height, self.cell_size, "height")

    @property
    def num_w(self) -> int:
        """Cell count along x."""
        return cell_count(self.length, self.cell_size, "length")

    @property
    def num_l(self) -> int:
        """Cell count along y."""
        return cell_count(self.width, self.cell_size, "width")

    @property
    def num_h(self) -> int:
        """Cell count along z."""
        return cell_count(self.height, self.cell_size, "height")

    @property
    def array_size(self) -> int:
        return self.num_w * self.num_l * self.num_h

    @property
    def n_step(self) -> int:
        """Lattice steps per axis for the inflation radius."""
        return math.ceil(self.inflation / self.cell_size)


def point_to_indices(p: Vec3, config: GridConfig) -> tuple[int, int, int] | None:
    """Map a robot-frame point to (w, l, h) cell indices.

    Returns None when the point falls outside the grid box.
    """
    w = math.floor(p[0] / config.cell_size) + config.num_w // 2
    l = math.floor(p[1] / config.cell_size) + config.num_l // 2
    h = math.floor(p[2] / config.cell_size) + config.num_h // 2
    if 0 <= w < config.num_w and 0 <= l < config.num_l and 0 <= h < config.num_h:
        return w, l, h
    return None


def indices_to_id(indices: tuple[int, int, int], config: GridConfig) -> int:
    """Flatten (w, l, h) indices into the storage offset."""
    w, l, h = indices
    if not (0 <= w < config.num_w and 0 <= l < config.num_l and 0 <= h < config.num_h):
        raise ValueError(f"indices {indices} outside grid")
    return h * config.num_w * config.num_l + w * config.num_l + l


def id_to_indices(cell_id: int, config: GridConfig) -> tuple[int, int, int]:
    if not 0 <= cell_id < config.array_size:
        raise ValueError(f"cell id {cell_id} outside grid")
    per_slice = config.num_w * config.num_l
    h, rem = divmod(cell_id, per_slice)
    w, l = divmod(rem, config.num_l)
    return w, l, h


@njit(cache=True)
def _inflate_kernel(cells, pts, lam, size, n_off, num_w, num_l, num_h):
    # Bins every lattice point (P - lam) + size*(a, b, c) individually.
    # The expression order here must stay as written: queries and tests
    # bin the same points through the same arithmetic.
    half_w = num_w // 2
    half_l = num_l // 2
    half_h = num_h // 2
    for i in range(pts.shape[0]):
        px = pts[i, 0]
        py = pts[i, 1]
        pz = pts[i, 2]
        for a in range(n_off):
            qx = (px - lam) + size * a
            w = int(math.floor(qx / size)) + half_w
            if w < 0 or w >= num_w:
                continue
            for b in range(n_off):
                qy = (py - lam) + size * b
                l = int(math.floor(qy / size)) + half_l
                if l < 0 or l >= num_l:
                    continue
                for c in range(n_off):
                    qz = (pz - lam) + size * c
                    h = int(math.floor(qz / size)) + half_h
                    if h < 0 or h >= num_h:
                        continue
                    cells[(h * num_w + w) * num_l + l] = 1


@dataclass
class LocalGridMap:
    """Dense inflated occupancy snapshot around the robot."""

    config: GridConfig
    cells: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.cells is None:
            self.cells = np.zeros(self.config.array_size, dtype=np.uint8)
        elif self.cells.shape != (self.config.array_size,):
            raise ValueError("cell array does not match grid geometry")

    def contains(self, p: Vec3) -> bool:
        return point_to_indices(np.asarray(p, dtype=float), self.config) is not None

    def is_occupied(self, query: Vec3 | int) -> bool:
        """Occupancy at a robot-frame point or a flat cell id.

        Points outside the grid box report free; callers that need to
        distinguish that case use contains().
        """
        if isinstance(query, (int, np.integer)):
            if not 0 <= query < self.config.array_size:
                raise ValueError(f"cell id {query} outside grid")
            return bool(self.cells[query])
        idx = point_to_indices(np.asarray(query, dtype=float), self.config)
        if idx is None:
            return False
        return bool(self.cells[indices_to_id(idx, self.config)])

    def query_points(self, points: np.ndarray) -> np.ndarray:
        """Vectorized occupancy for (N, 3) robot-frame points.

        Out-of-box points report free, matching is_occupied.
        """
        pts = np.asarray(points, dtype=float)
        cfg = self.config
        w = np.floor(pts[:, 0] / cfg.cell_size).astype(np.int64) + cfg.num_w // 2
        l = np.floor(pts[:, 1] / cfg.cell_size).astype(np.int64) + cfg.num_l // 2
        h = np.floor(pts[:, 2] / cfg.cell_size).astype(np.int64) + cfg.num_h // 2
        inside = (
            (w >= 0) & (w < cfg.num_w)
            & (l >= 0) & (l < cfg.num_l)
            & (h >= 0) & (h < cfg.num_h)
        )
        out = np.zeros(len(pts), dtype=bool)
        if inside.any():
            ids = (h[inside] * cfg.num_w + w[inside]) * cfg.num_l + l[inside]
            out[inside] = self.cells[ids] != 0
        return out

    def occupied_ids(self) -> np.ndarray:
        return np.flatnonzero(self.cells)

    def dump_slice_pgm(self, h_index: int, path: str) -> None:
        """Write one horizontal slice as binary PGM, occupied black.

        Rows run from max y at the top to min y at the bottom; columns
        run with x.
        """
        cfg = self.config
        if not 0 <= h_index < cfg.num_h:
            raise ValueError(f"slice index {h_index} outside grid")
        per_slice = cfg.num_w * cfg.num_l
        block = self.cells[h_index * per_slice : (h_index + 1) * per_slice]
        grid = block.reshape(cfg.num_w, cfg.num_l)  # [w, l]
        image = np.where(grid.T[::-1] != 0, 0, 255).astype(np.uint8)
        header = f"P5\n{cfg.num_w} {cfg.num_l}\n255\n".encode("ascii")
        with open(path, "wb") as f:
            f.write(header + image.tobytes())


def rebuild_from_frames(
    point_sets: list[np.ndarray] | tuple[np.ndarray, ...],
    config: GridConfig,
) -> LocalGridMap:
    """Build a fresh grid from robot-frame point sets.

    The grid is zeroed and repopulated; fusing several recent scans is
    just a matter of passing their point sets together.  Rebuilding from
    the same inputs is bit-exact.
    """
    grid = LocalGridMap(config)
    n_step = config.n_step
    n_off = (2 * n_step + 1) if config.symmetric_inflation else (n_step + 1)
    for pts in point_sets:
        arr = np.ascontiguousarray(np.asarray(pts, dtype=np.float64).reshape(-1, 3))
        if len(arr) == 0:
            continue
        if not np.isfinite(arr).all():
            raise ValueError("points must be finite")
        _inflate_kernel(
            grid.cells,
            arr,
            float(config.inflation),
            float(config.cell_size),
            n_off,
            config.num_w,
            config.num_l,
            config.num_h,
        )
    return grid
