"""Episode output files: CSV logs, PGM snapshots, PLY cloud, config echo.

Every writer uses explicit number formatting so a fixed seed produces
byte-identical files; summary.json is the one exception (it carries the
wall-clock measurement).
"""

from __future__ import annotations

import json
import os

import numpy as np

from .config import ScenarioConfig, config_to_dict
from .exploration import GlobalCloudMap
from .mission import EpisodeMetrics, EpisodeResult


def _fmt(v: float) -> str:
    return f"{float(v):.9g}"


def write_metrics_csv(path: str, metrics: EpisodeMetrics) -> None:
    rows = ["t,x,y,z,goal_id"]
    for t, p, gid in zip(metrics.times, metrics.positions, metrics.goal_ids):
        rows.append(
            f"{t:.5f},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},{int(gid)}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def write_trajectory_csv(path: str, metrics: EpisodeMetrics) -> None:
    rows = ["t,x,y,z,vx,vy,vz"]
    for t, p, v in zip(metrics.times, metrics.positions, metrics.velocities):
        rows.append(
            f"{t:.5f},{_fmt(p[0])},{_fmt(p[1])},{_fmt(p[2])},"
            f"{_fmt(v[0])},{_fmt(v[1])},{_fmt(v[2])}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def write_goals_csv(path: str, metrics: EpisodeMetrics) -> None:
    rows = ["id,t,x,y,z,revenue,info_gain,distance,heading,kind"]
    for g in metrics.goals:
        rows.append(
            f"{g.index},{g.t:.5f},{_fmt(g.position[0])},{_fmt(g.position[1])},"
            f"{_fmt(g.position[2])},{_fmt(g.revenue)},{g.info_gain},"
            f"{_fmt(g.distance)},{_fmt(g.heading)},{g.kind}"
        )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(rows) + "\n")


def write_pgm(path: str, image: np.ndarray) -> None:
    """Binary P5 grayscale; image rows top-first."""
    if image.ndim != 2 or image.dtype != np.uint8:
        raise ValueError("image must be a 2D uint8 array")
    header = f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(image.tobytes())


def write_ply(path: str, cloud: GlobalCloudMap) -> None:
    pts = cloud.points()
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(pts)}",
        "property float x",
        "property float y",
        "property float z",
        "end_header",
    ]
    for p in pts:
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_config_echo(path: str, cfg: ScenarioConfig) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_summary(path: str, metrics: EpisodeMetrics) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(metrics.summary(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def export_artifacts(out_dir: str, cfg: ScenarioConfig, result: EpisodeResult) -> list[str]:
    """Write the full artifact set for one episode; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []

    def emit(name: str, writer, *args) -> None:
        p = os.path.join(out_dir, name)
        writer(p, *args)
        paths.append(p)

    emit("metrics.csv", write_metrics_csv, result.metrics)
    emit("trajectory.csv", write_trajectory_csv, result.metrics)
    emit("goals.csv", write_goals_csv, result.metrics)
    emit("map.ply", write_ply, result.cloud)
    emit("config-echo.json", write_config_echo, cfg)
    emit("summary.json", write_summary, result.metrics)
    for i, image in enumerate(result.snapshots):
        emit(f"occupancy_{i:04d}.pgm", write_pgm, image)
    return paths
