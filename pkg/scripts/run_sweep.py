#!/usr/bin/env python3
"""Run the desk-scale scheme-comparison sweep and write CSV + summary.

Defaults reproduce the headline comparison: 7 sites, two guaranteed and
two elastic slices, 300 epochs per seed, five seeds, four elastic-share
grid points.  Pass --jobs to parallelize over (grid point, seed) cells.
"""

import sys

from slicegame.cli import main

DEFAULTS = [
    "sweep",
    "--family", "orthogonal",
    "--grid", "0.4,0.8,1.2,1.6",
    "--seeds", "5",
    "--output-dir", "results",
]

if __name__ == "__main__":
    sys.exit(main(DEFAULTS + sys.argv[1:]))
