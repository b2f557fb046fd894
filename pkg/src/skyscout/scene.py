"""Synthetic worlds: solid primitives, procedural generators, raycasting.

A Scene is an immutable set of solids (cylinders, boxes, halfspaces)
plus an axis-aligned working volume. Raycast and containment queries
are vectorized over point/ray batches; all randomness is confined to
the generator seeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

_EPS = 1e-9


@dataclass(frozen=True)
class Cylinder:
    """Vertical solid cylinder spanning z_range at center (x, y)."""

    center: np.ndarray  # (2,) [m]
    radius: float  # [m]
    z_range: tuple  # (lo, hi) [m]

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        cx, cy = self.center
        z0, z1 = self.z_range
        ox = origins[:, 0] - cx
        oy = origins[:, 1] - cy
        dx, dy, dz = dirs[:, 0], dirs[:, 1], dirs[:, 2]
        t = np.full(len(origins), np.inf)

        # side surface: quadratic in the xy plane
        a = dx * dx + dy * dy
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - self.radius**2
        disc = b * b - 4.0 * a * c
        ok = (disc >= 0.0) & (a > _EPS)
        sq = np.sqrt(np.where(ok, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            for root in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)):
                z = origins[:, 2] + root * dirs[:, 2]
                valid = ok & (root > _EPS) & (z >= z0) & (z <= z1)
                t = np.where(valid & (root < t), root, t)

        # end caps
        for zc in (z0, z1):
            with np.errstate(divide="ignore", invalid="ignore"):
                tc = (zc - origins[:, 2]) / dz
                px = ox + tc * dx
                py = oy + tc * dy
                inside_cap = px * px + py * py <= self.radius**2
            valid = (np.abs(dz) > _EPS) & (tc > _EPS) & inside_cap
            t = np.where(valid & (tc < t), tc, t)
        return t

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        qr = (
            np.hypot(points[:, 0] - self.center[0], points[:, 1] - self.center[1])
            - self.radius
        )
        z0, z1 = self.z_range
        zc = (z0 + z1) / 2.0
        qz = np.abs(points[:, 2] - zc) - (z1 - z0) / 2.0
        outside = np.hypot(np.maximum(qr, 0.0), np.maximum(qz, 0.0))
        inside = np.minimum(np.maximum(qr, qz), 0.0)
        return outside + inside

    def to_dict(self) -> dict:
        return {
            "type": "cylinder",
            "center": [float(self.center[0]), float(self.center[1])],
            "radius": float(self.radius),
            "z_range": [float(self.z_range[0]), float(self.z_range[1])],
        }


@dataclass(frozen=True)
class Box:
    """Axis-aligned solid box."""

    lo: np.ndarray  # (3,) [m]
    hi: np.ndarray  # (3,) [m]

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (self.lo[None, :] - origins) / dirs
            t2 = (self.hi[None, :] - origins) / dirs
        tmin = np.nanmax(np.minimum(t1, t2), axis=1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=1)
        hit = (tmax >= tmin) & (tmax > _EPS)
        # origin inside the solid exits at tmax
        t = np.where(tmin > _EPS, tmin, tmax)
        return np.where(hit, t, np.inf)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        center = (self.lo + self.hi) / 2.0
        half = (self.hi - self.lo) / 2.0
        q = np.abs(points - center[None, :]) - half[None, :]
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(np.max(q, axis=1), 0.0)
        return outside + inside

    def to_dict(self) -> dict:
        return {"type": "box", "lo": self.lo.tolist(), "hi": self.hi.tolist()}


@dataclass(frozen=True)
class Halfspace:
    """Solid halfspace: points with normal . p <= offset are matter."""

    normal: np.ndarray  # (3,) unit
    offset: float  # [m]

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        num = self.offset - origins @ self.normal
        den = dirs @ self.normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = num / den
        valid = (t > _EPS) & (num < 0.0)  # origin outside the matter
        return np.where(valid, t, np.inf)

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        return points @ self.normal - self.offset

    def to_dict(self) -> dict:
        return {
            "type": "halfspace",
            "normal": self.normal.tolist(),
            "offset": float(self.offset),
        }


Primitive = Cylinder | Box | Halfspace


@dataclass(frozen=True)
class Scene:
    """Immutable set of solids plus the working volume."""

    primitives: tuple
    bounds_lo: np.ndarray  # (3,) [m]
    bounds_hi: np.ndarray  # (3,) [m]

    def raycast(self, origins: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        """Nearest-hit distance per ray; inf where nothing is hit.

        Args:
            origins: (N, 3) ray origins, world frame.
            dirs: (N, 3) unit directions, world frame.
        """
        t = np.full(len(origins), np.inf)
        for prim in self.primitives:
            t = np.minimum(t, prim.raycast(origins, dirs))
        return t

    def signed_distance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance to the nearest solid, negative inside."""
        points = np.atleast_2d(points)
        if not self.primitives:
            return np.full(len(points), np.inf)
        d = np.full(len(points), np.inf)
        for prim in self.primitives:
            d = np.minimum(d, prim.signed_distance(points))
        return d

    def contains(self, points: np.ndarray) -> np.ndarray:
        """True where a point is inside some solid."""
        return self.signed_distance(points) <= 0.0

    def to_dict(self) -> dict:
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "bounds_lo": self.bounds_lo.tolist(),
            "bounds_hi": self.bounds_hi.tolist(),
        }

    @staticmethod
    def from_dict(data: dict) -> "Scene":
        prims = []
        for p in data["primitives"]:
            kind = p["type"]
            if kind == "cylinder":
                prims.append(
                    Cylinder(
                        np.asarray(p["center"], dtype=float),
                        float(p["radius"]),
                        (float(p["z_range"][0]), float(p["z_range"][1])),
                    )
                )
            elif kind == "box":
                prims.append(
                    Box(
                        np.asarray(p["lo"], dtype=float),
                        np.asarray(p["hi"], dtype=float),
                    )
                )
            elif kind == "halfspace":
                prims.append(
                    Halfspace(np.asarray(p["normal"], dtype=float), float(p["offset"]))
                )
            else:
                raise ValueError(f"unknown primitive type: {kind!r}")
        return Scene(
            tuple(prims),
            np.asarray(data["bounds_lo"], dtype=float),
            np.asarray(data["bounds_hi"], dtype=float),
        )


def make_empty_scene(bounds_lo, bounds_hi, ground: bool = True) -> Scene:
    """Obstacle-free scene, optionally with a ground plane at z = 0."""
    prims = []
    if ground:
        prims.append(Halfspace(np.array([0.0, 0.0, 1.0]), 0.0))
    return Scene(
        tuple(prims),
        np.asarray(bounds_lo, dtype=float),
        np.asarray(bounds_hi, dtype=float),
    )


def generate_forest(
    seed: int,
    bounds_lo,
    bounds_hi,
    tree_density: float = 0.02,
    radius_range: tuple = (0.15, 0.45),
    height_range: tuple = (2.5, 4.0),
    keepout_radius: float = 1.5,
) -> Scene:
    """Rejection-sampled forest of non-overlapping trunk cylinders.

    Tree count is round(density * area). A disk of keepout_radius around
    the origin stays clear so the start pose is never inside a trunk.

    Raises:
        RuntimeError: if the density cannot be placed without overlap.
    """
    if tree_density <= 0:
        raise ValueError("tree_density must be positive")
    bounds_lo = np.asarray(bounds_lo, dtype=float)
    bounds_hi = np.asarray(bounds_hi, dtype=float)
    area = (bounds_hi[0] - bounds_lo[0]) * (bounds_hi[1] - bounds_lo[1])
    n_trees = int(round(tree_density * area))
    rng = np.random.default_rng(seed)

    centers: list[np.ndarray] = []
    radii: list[float] = []
    trees: list[Cylinder] = []
    attempts = 0
    max_attempts = 300 * max(n_trees, 1)
    while len(trees) < n_trees:
        if attempts >= max_attempts:
            raise RuntimeError(
                f"forest density {tree_density}/m^2 infeasible for bounds "
                f"after {max_attempts} attempts"
            )
        attempts += 1
        r = rng.uniform(*radius_range)
        x = rng.uniform(bounds_lo[0] + r, bounds_hi[0] - r)
        y = rng.uniform(bounds_lo[1] + r, bounds_hi[1] - r)
        h = rng.uniform(*height_range)
        if np.hypot(x, y) < keepout_radius + r:
            continue
        ok = True
        for c, cr in zip(centers, radii):
            if np.hypot(x - c[0], y - c[1]) <= r + cr:
                ok = False
                break
        if not ok:
            continue
        center = np.array([x, y])
        centers.append(center)
        radii.append(r)
        trees.append(Cylinder(center, r, (0.0, h)))

    ground = Halfspace(np.array([0.0, 0.0, 1.0]), 0.0)
    return Scene(tuple(trees) + (ground,), bounds_lo, bounds_hi)


def generate_garage(
    seed: int,
    bounds_lo,
    bounds_hi,
    pillar_grid_pitch: float = 8.0,
    wall_thickness: float = 0.3,
    pillar_side: float = 0.4,
    ceiling_height: float = 3.0,
) -> Scene:
    """Pillar lattice inside perimeter walls under a ceiling slab.

    Interior pillars sit at integer multiples of the pitch measured from
    the low corner, strictly inside the footprint. The layout is fully
    determined by the parameters; seed is accepted for interface
    symmetry with the forest generator.
    """
    del seed  # layout is deterministic
    bounds_lo = np.asarray(bounds_lo, dtype=float)
    bounds_hi = np.asarray(bounds_hi, dtype=float)
    x0, y0 = bounds_lo[0], bounds_lo[1]
    x1, y1 = bounds_hi[0], bounds_hi[1]
    w = wall_thickness
    h = ceiling_height

    prims: list[Primitive] = [
        # perimeter walls, full height
        Box(np.array([x0, y0, 0.0]), np.array([x0 + w, y1, h])),
        Box(np.array([x1 - w, y0, 0.0]), np.array([x1, y1, h])),
        Box(np.array([x0, y0, 0.0]), np.array([x1, y0 + w, h])),
        Box(np.array([x0, y1 - w, 0.0]), np.array([x1, y1, h])),
        # ceiling slab and floor
        Box(np.array([x0, y0, h]), np.array([x1, y1, h + w])),
        Halfspace(np.array([0.0, 0.0, 1.0]), 0.0),
    ]

    half = pillar_side / 2.0
    kx = 1
    while x0 + kx * pillar_grid_pitch < x1 - _EPS:
        ky = 1
        while y0 + ky * pillar_grid_pitch < y1 - _EPS:
            cx = x0 + kx * pillar_grid_pitch
            cy = y0 + ky * pillar_grid_pitch
            prims.append(
                Box(
                    np.array([cx - half, cy - half, 0.0]),
                    np.array([cx + half, cy + half, h]),
                )
            )
            ky += 1
        kx += 1

    return Scene(tuple(prims), bounds_lo, bounds_hi)
