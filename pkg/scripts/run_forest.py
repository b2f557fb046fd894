#!/usr/bin/env python3
"""Run one forest episode and drop its artifacts under out/forest.

Usage: python scripts/run_forest.py [seed] [mode]
"""

import pathlib
import sys

from skyscout.cli import main

ROOT = pathlib.Path(__file__).resolve().parent.parent

if __name__ == "__main__":
    seed = sys.argv[1] if len(sys.argv) > 1 else "0"
    mode = sys.argv[2] if len(sys.argv) > 2 else "direction"
    raise SystemExit(
        main(
            [
                "run",
                "--config", str(ROOT / "configs" / "forest.json"),
                "--out", str(ROOT / "out" / f"forest-{mode}-seed{seed}"),
                "--seed", seed,
                "--mode", mode,
            ]
        )
    )
