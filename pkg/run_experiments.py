#!/usr/bin/env python3
"""
Particle Planning Experiment Runner

This script runs the command-line harness: experiment, sweep, lowerbound,
validate and bounds. See `python run_experiments.py --help`.
"""

import sys

from particle_planning.cli import main

if __name__ == "__main__":
    sys.exit(main())
