#!/usr/bin/env python3
"""Batch both goal-selection modes over a seed range, then aggregate.

Usage: python scripts/compare_modes.py [seeds] [config]
    seeds   inclusive range like 0..9 (default 0..9)
    config  preset path (default configs/forest.json)

Writes per-episode artifacts plus compare_heading.csv and
compare_coverage.csv under out/compare.
"""

import pathlib
import sys

from skyscout.cli import main

ROOT = pathlib.Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    seeds = sys.argv[1] if len(sys.argv) > 1 else "0..9"
    config = sys.argv[2] if len(sys.argv) > 2 else str(ROOT / "configs" / "forest.json")
    out = str(ROOT / "out" / "compare")
    code = main(["batch", "--config", config, "--seeds", seeds, "--out", out])
    if code == 0:
        code = main(["compare", "--out", out])
    raise SystemExit(code)
