#!/usr/bin/env python3
"""Render the three sweep charts (and optionally a convergence trace) from
a sweep CSV produced by ``slicegame sweep`` or scripts/run_sweep.py.

Usage: render_figures.py SWEEP_CSV [OUTPUT_DIR] [--trace TRACE_CSV]
"""

import argparse
import sys
from pathlib import Path

from slicefigs import FigureSpec, render


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("sweep_csv")
    p.add_argument("output_dir", nargs="?", default="figures")
    p.add_argument("--trace", help="optional step-norm trace CSV")
    p.add_argument("--ratio", type=float,
                   help="contraction reference ratio for the trace chart")
    args = p.parse_args(argv)

    outdir = Path(args.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for kind in ("tradeoff", "outage-gain", "utility-gain"):
        out = outdir / f"{kind}.png"
        render(FigureSpec(inputs=(args.sweep_csv,), kind=kind,
                          output=str(out)))
        print(f"wrote {out}")
    if args.trace:
        out = outdir / "convergence.png"
        render(FigureSpec(inputs=(args.trace,), kind="convergence",
                          output=str(out), ratio=args.ratio))
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
