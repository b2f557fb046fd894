"""Scenario configuration: versioned JSON in, validated dataclasses out.

Parsing is strict: unknown keys and version mismatches are rejected so a
typo in a config file fails loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .exploration import ExploreGridConfig
from .local_grid import GridConfig
from .scene import Scene, generate_forest, generate_garage, make_empty_scene
from .sensors import ImuSpec, LidarSpec, PoseNoiseModel
from .trajopt import CostWeights

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


@dataclass(frozen=True)
class SceneSpec:
    """What world to build; seed only matters for sampled layouts."""

    kind: str = "forest"
    seed: int = 0
    bounds_lo: tuple = (-27.0, -22.0, 0.0)
    bounds_hi: tuple = (27.0, 22.0, 5.0)
    tree_density: float = 0.015
    pillar_pitch: float = 8.0

    def __post_init__(self) -> None:
        if self.kind not in ("forest", "garage", "empty"):
            raise ConfigError(f"unknown scene kind {self.kind!r}")
        lo, hi = self.bounds_lo, self.bounds_hi
        if len(lo) != 3 or len(hi) != 3 or any(h <= l for l, h in zip(lo, hi)):
            raise ConfigError("scene bounds must be a positive 3D box")

    def build(self, seed: int | None = None) -> Scene:
        s = self.seed if seed is None else seed
        if self.kind == "forest":
            return generate_forest(
                s, self.bounds_lo, self.bounds_hi, tree_density=self.tree_density
            )
        if self.kind == "garage":
            return generate_garage(
                s, self.bounds_lo, self.bounds_hi, pillar_grid_pitch=self.pillar_pitch
            )
        return make_empty_scene(self.bounds_lo, self.bounds_hi)


@dataclass(frozen=True)
class RateSpec:
    """Loop frequencies; slower activities run on integer subdivisions
    of the base (IMU) tick."""

    track_hz: float = 100.0
    collision_hz: float = 20.0
    lidar_hz: float = 10.0
    imu_hz: float = 200.0

    def __post_init__(self) -> None:
        vals = (self.track_hz, self.collision_hz, self.lidar_hz, self.imu_hz)
        if any(v <= 0 for v in vals):
            raise ConfigError("rates must be positive")
        for name, v in (
            ("track_hz", self.track_hz),
            ("collision_hz", self.collision_hz),
            ("lidar_hz", self.lidar_hz),
        ):
            div = self.imu_hz / v
            if abs(div - round(div)) > 1e-9:
                raise ConfigError(f"{name} must divide imu_hz evenly")

    def divisor(self, hz: float) -> int:
        return int(round(self.imu_hz / hz))


@dataclass(frozen=True)
class ExploreSpec:
    """Frontier detection and goal scoring knobs."""

    lambda_info: float = 1.0
    lambda_dist: float = 3.0
    lambda_dir: float = 2.0
    theta_stop: int = 20
    info_radius: float = 3.0
    rrt_step: float = 1.0
    rrt_iterations: int = 2000
    clearance: float = 0.3
    known_window: float = 1.0
    known_fraction: float = 0.95

    def __post_init__(self) -> None:
        if self.theta_stop < 0:
            raise ConfigError("theta_stop must be non-negative")
        if self.rrt_step <= 0 or self.rrt_iterations <= 0:
            raise ConfigError("rrt parameters must be positive")
        if not 0.0 < self.known_fraction <= 1.0:
            raise ConfigError("known_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ScenarioConfig:
    version: int = CONFIG_VERSION
    name: str = "forest"
    seed: int = 0
    mode: str = "direction"
    scene: SceneSpec = field(default_factory=SceneSpec)
    lidar: LidarSpec = field(default_factory=LidarSpec)
    imu: ImuSpec = field(default_factory=ImuSpec)
    pose_noise: PoseNoiseModel = field(default_factory=PoseNoiseModel)
    local_grid: GridConfig = field(
        default_factory=lambda: GridConfig(
            length=20.0,
            width=20.0,
            height=2.0,
            cell_size=0.1,
            inflation=0.3,
            symmetric_inflation=True,
        )
    )
    cost: CostWeights = field(default_factory=CostWeights)
    explore: ExploreSpec = field(default_factory=ExploreSpec)
    boundary: ExploreGridConfig = field(
        default_factory=lambda: ExploreGridConfig(
            -25.0, 25.0, -20.0, 20.0, 0.1, 0.2, 2.0
        )
    )
    rates: RateSpec = field(default_factory=RateSpec)
    start: tuple = (0.0, 0.0)
    altitude: float = 1.2
    budget_s: float = 240.0
    return_to_start: bool = True
    goal_radius: float = 0.5
    # control-point spacing ~0.8*v_max*knot_dt must stay below the
    # thinnest inflated obstacle so every crossing anchors the optimizer
    knot_dt: float = 0.3

    def __post_init__(self) -> None:
        if self.version != CONFIG_VERSION:
            raise ConfigError(
                f"config version {self.version} unsupported (expected {CONFIG_VERSION})"
            )
        if self.mode not in ("baseline", "direction"):
            raise ConfigError(f"mode must be baseline or direction, got {self.mode!r}")
        if len(self.start) != 2:
            raise ConfigError("start must be (x, y)")
        b, lo, hi = self.boundary, self.scene.bounds_lo, self.scene.bounds_hi
        if (
            b.x_min < lo[0] - 1e-9
            or b.x_max > hi[0] + 1e-9
            or b.y_min < lo[1] - 1e-9
            or b.y_max > hi[1] + 1e-9
        ):
            raise ConfigError("exploration boundary must lie inside scene bounds")
        if not (b.x_min < self.start[0] < b.x_max and b.y_min < self.start[1] < b.y_max):
            raise ConfigError("start must lie inside the exploration boundary")
        if self.budget_s <= 0 or self.knot_dt <= 0 or self.goal_radius <= 0:
            raise ConfigError("budget_s, knot_dt, goal_radius must be positive")
        if not math.isfinite(self.altitude):
            raise ConfigError("altitude must be finite")


_SECTION_TYPES = {
    "scene": SceneSpec,
    "lidar": LidarSpec,
    "imu": ImuSpec,
    "pose_noise": PoseNoiseModel,
    "local_grid": GridConfig,
    "cost": CostWeights,
    "explore": ExploreSpec,
    "boundary": ExploreGridConfig,
    "rates": RateSpec,
}


def _coerce(value, sample):
    """Shape a JSON value like the dataclass default it replaces."""
    if isinstance(sample, np.ndarray):
        return np.asarray(value, dtype=float)
    if isinstance(sample, tuple):
        return tuple(value)
    if isinstance(sample, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}")
        return value
    if isinstance(sample, int) and not isinstance(value, (bool, int)):
        raise ConfigError(f"expected an integer, got {value!r}")
    return value


def _section_from_dict(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must be an object")
    defaults = cls()
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key {path}.{sorted(unknown)[0]}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(value, getattr(defaults, key))
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("config root must be an object")
    names = {f.name for f in fields(ScenarioConfig)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]}")
    if "version" not in data:
        raise ConfigError("config must declare a version")
    kwargs = {}
    for key, value in data.items():
        if key in _SECTION_TYPES:
            kwargs[key] = _section_from_dict(_SECTION_TYPES[key], value, key)
        else:
            kwargs[key] = _coerce(value, getattr(ScenarioConfig, key))
    try:
        return ScenarioConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return [float(v) for v in value]
    if isinstance(value, tuple):
        return list(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    return value


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out: dict = {}
    for f in fields(ScenarioConfig):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = {
                g.name: _jsonable(getattr(value, g.name)) for g in fields(value)
            }
        else:
            out[f.name] = _jsonable(value)
    return out


def load_config(path: str) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(data)


def dump_config(cfg: ScenarioConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_overrides(
    cfg: ScenarioConfig, seed: int | None = None, mode: str | None = None
) -> ScenarioConfig:
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if mode is not None:
        changes["mode"] = mode
    return dataclasses.replace(cfg, **changes) if changes else cfg
