#!/usr/bin/env python3
"""Run every bundled experiment config into reports/<name>/.

Exit code is the worst exit code across experiments (2 beats 1 beats 0).
"""
import json
import sys
import time
from pathlib import Path

from rectlab import harness

CONFIG_DIR = Path(__file__).parent / "configs"


def main() -> int:
    worst = 0
    for path in sorted(CONFIG_DIR.glob("*.json")):
        cfg = harness.ExperimentConfig.from_json(path)
        t0 = time.time()
        rc = harness.run(cfg)
        print(f"== {path.stem}: exit {rc} in {time.time() - t0:.0f}s")
        worst = max(worst, rc)
    return worst


if __name__ == "__main__":
    sys.exit(main())
