"""Command-line entry point.

    explore run --config forest.json --out out/ [--seed 3] [--mode direction]
    explore batch --config forest.json --seeds 0..9 --out out/
    explore compare --out out/

Exit codes: 0 success, 2 config or usage error, 3 episode failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np

from .artifacts import export_artifacts
from .config import ConfigError, load_config, with_overrides
from .mission import FAILURE, run_episode

MODES = ("baseline", "direction")


def _parse_seed_range(text: str) -> list[int]:
    try:
        lo_s, hi_s = text.split("..", 1)
        lo, hi = int(lo_s), int(hi_s)
    except ValueError as exc:
        raise ConfigError(f"bad seed range {text!r} (expected a..b)") from exc
    if hi < lo:
        raise ConfigError(f"bad seed range {text!r} (empty)")
    return list(range(lo, hi + 1))


def _episode(cfg, out_dir: str) -> int:
    result = run_episode(cfg)
    export_artifacts(out_dir, cfg, result)
    s = result.metrics.summary()
    print(
        f"seed={cfg.seed} mode={cfg.mode} reason={s['termination_reason']} "
        f"coverage={s['final_coverage']:.3f} goals={s['goal_count']} "
        f"path={s['path_length_m']:.1f}m wall={s['wallclock_s']:.1f}s"
    )
    return 3 if result.metrics.termination_reason == FAILURE else 0


def cmd_run(args) -> int:
    cfg = with_overrides(load_config(args.config), seed=args.seed, mode=args.mode)
    return _episode(cfg, args.out)


def cmd_batch(args) -> int:
    base = load_config(args.config)
    seeds = _parse_seed_range(args.seeds)
    worst = 0
    for seed in seeds:
        for mode in MODES:
            cfg = with_overrides(base, seed=seed, mode=mode)
            out_dir = os.path.join(args.out, f"{mode}-seed{seed}")
            worst = max(worst, _episode(cfg, out_dir))
    return worst


def _load_run(out_root: str, mode: str, seed: int):
    run_dir = os.path.join(out_root, f"{mode}-seed{seed}")
    summary_path = os.path.join(run_dir, "summary.json")
    if not os.path.isfile(summary_path):
        return None
    with open(summary_path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def cmd_compare(args) -> int:
    if not os.path.isdir(args.out):
        print(f"no such directory: {args.out}", file=sys.stderr)
        return 2
    seeds = sorted(
        {
            int(name.split("seed", 1)[1])
            for name in os.listdir(args.out)
            if name.startswith("baseline-seed")
        }
    )
    rows = []
    for seed in seeds:
        base = _load_run(args.out, "baseline", seed)
        direc = _load_run(args.out, "direction", seed)
        if base is None or direc is None:
            continue
        rows.append((seed, base, direc))
    if not rows:
        print("no paired baseline/direction runs found", file=sys.stderr)
        return 2

    heading_path = os.path.join(args.out, "compare_heading.csv")
    with open(heading_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "baseline_heading_rad", "direction_heading_rad"])
        for seed, base, direc in rows:
            w.writerow(
                [seed, base["mean_heading_change_rad"], direc["mean_heading_change_rad"]]
            )
        w.writerow(
            [
                "mean",
                float(np.mean([r[1]["mean_heading_change_rad"] for r in rows])),
                float(np.mean([r[2]["mean_heading_change_rad"] for r in rows])),
            ]
        )

    coverage_path = os.path.join(args.out, "compare_coverage.csv")
    with open(coverage_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [
                "seed",
                "baseline_coverage",
                "direction_coverage",
                "baseline_path_m",
                "direction_path_m",
            ]
        )
        for seed, base, direc in rows:
            w.writerow(
                [
                    seed,
                    base["final_coverage"],
                    direc["final_coverage"],
                    base["path_length_m"],
                    direc["path_length_m"],
                ]
            )

    mean_base = float(np.mean([r[1]["mean_heading_change_rad"] for r in rows]))
    mean_dir = float(np.mean([r[2]["mean_heading_change_rad"] for r in rows]))
    print(f"paired seeds: {[r[0] for r in rows]}")
    print(f"mean heading change: baseline={mean_base:.4f} direction={mean_dir:.4f}")
    print(f"wrote {heading_path} and {coverage_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="explore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one episode")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--mode", choices=MODES, default=None)
    p_run.set_defaults(func=cmd_run)

    p_batch = sub.add_parser("batch", help="run both modes over a seed range")
    p_batch.add_argument("--config", required=True)
    p_batch.add_argument("--seeds", required=True, help="inclusive range, e.g. 0..9")
    p_batch.add_argument("--out", required=True)
    p_batch.set_defaults(func=cmd_batch)

    p_cmp = sub.add_parser("compare", help="aggregate a batch directory")
    p_cmp.add_argument("--out", required=True)
    p_cmp.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
