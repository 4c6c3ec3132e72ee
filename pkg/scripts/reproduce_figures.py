"""Regenerate every figure dataset (CSV, metadata and SVG) under one directory.

    python scripts/reproduce_figures.py --out out --workers 4 [--only fig3 fig4]
"""

import argparse
import time
from pathlib import Path

from dopplerfisher.experiments import ExperimentSpec, run

FIGURES = ("fig1", "fig2", "fig3", "fig4")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out", type=Path)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--only", nargs="+", choices=FIGURES, default=FIGURES)
    ap.add_argument("--no-plot", action="store_true")
    args = ap.parse_args()
    for name in args.only:
        start = time.time()
        res = run(ExperimentSpec(name, out=args.out / name, plot=not args.no_plot, workers=args.workers))
        print(f"{name}: {len(res.files)} files in {time.time() - start:.0f}s -> {args.out / name}")


if __name__ == "__main__":
    main()
