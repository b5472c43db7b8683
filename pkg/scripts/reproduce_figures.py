"""Run every simulation study at the desk-scale budget.

Writes one directory per study under ``--out`` with raw per-replication rows
and a per-cell summary, e.g. ``out/fig3/fig3_summary.csv``.

    python scripts/reproduce_figures.py --out figures --jobs 4
    python scripts/reproduce_figures.py --studies fig2 fig5 --replications 5
"""

import argparse
import logging
import time
from pathlib import Path

from drmvp import pipeline
from drmvp.pipeline import StudyConfig

# (study, overrides of the default StudyConfig)
PLAN = {
    "martingale": {},
    "fig1": {},
    "fig2": {"ns": (60,)},
    "fig3": {},
    "fig5": {"cells": ((50, 390), (125, 780), (250, 2340))},
    "prop1": {"replications": 10, "n_paths": 5000},
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="figures")
    ap.add_argument("--studies", nargs="+", default=list(PLAN), choices=list(PLAN))
    ap.add_argument("--replications", type=int, default=None, help="override the replication count")
    ap.add_argument("--p", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--jobs", type=int, default=pipeline.default_jobs())
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    for name in args.studies:
        kw = dict(PLAN[name], p=args.p, seed=args.seed)
        if args.replications is not None:
            kw["replications"] = args.replications
        t0 = time.perf_counter()
        files = pipeline.reproduce(name, StudyConfig(**kw), Path(args.out) / name, jobs=args.jobs)
        print(f"{name}: {len(files)} file(s) in {time.perf_counter() - t0:.0f}s")
        for f in files:
            print(f"  {f}")


if __name__ == "__main__":
    main()
