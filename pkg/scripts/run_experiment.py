#!/usr/bin/env python3
"""Run one experiment config: python scripts/run_experiment.py configs/corona.json"""
import sys

from rectlab import harness

if __name__ == "__main__":
    sys.exit(harness.main(["run"] + sys.argv[1:]))
