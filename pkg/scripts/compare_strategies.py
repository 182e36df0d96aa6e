"""Strategy comparison on the synthetic benchmark.

Runs every query strategy for each seed and writes one row per run plus a
mean/std table. Example:

    python3 scripts/compare_strategies.py --arch dualfcnn --seeds 0,1,2,3,4 --out runs/strategies
"""
from __future__ import annotations

import argparse
import csv
import logging
import time
from pathlib import Path

import numpy as np

from mextract.benchmark import DESK_HIDDEN, DESK_PRE_CAP, BenchmarkConfig, run_grid
from mextract.sampling import STRATEGIES


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--arch", default="dualfcnn")
    ap.add_argument("--strategies", default=",".join(STRATEGIES))
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--rho", type=float, default=0.05, help="planted disagreement rate")
    ap.add_argument("--budget", type=int, default=2000)
    ap.add_argument("--rounds", type=int, default=4)
    ap.add_argument("--hidden", default=",".join(map(str, DESK_HIDDEN)))
    ap.add_argument("--pre-cap", type=int, default=DESK_PRE_CAP)
    ap.add_argument("--out", default="runs/strategies")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    seeds = [int(s) for s in args.seeds.split(",")]
    strategies = args.strategies.split(",")
    t0 = time.perf_counter()
    runs = run_grid(
        strategies, [args.arch], seeds, BenchmarkConfig(disagreement_rate=args.rho),
        args.budget, args.rounds, tuple(int(h) for h in args.hidden.split(",")), args.pre_cap,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "arch", "seed", "agreement", "queries"])
        for r in runs:
            w.writerow([r.strategy, r.arch, r.seed, f"{r.agreement:.6f}", r.queries])

    base = np.mean([r.agreement for r in runs if r.strategy == "random"]) if "random" in strategies else None
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy", "arch", "seeds", "agreement_mean", "agreement_std"])
        for s in strategies:
            a = np.array([r.agreement for r in runs if r.strategy == s])
            w.writerow([s, args.arch, a.size, f"{a.mean():.6f}", f"{a.std():.6f}"])
            gap = "" if base is None else f"  ({100 * (a.mean() - base):+.2f} vs random)"
            print(f"{s:18s} {100 * a.mean():6.2f} +- {100 * a.std():.2f}{gap}")
    print(f"{len(runs)} runs in {time.perf_counter() - t0:.0f}s -> {out}")


if __name__ == "__main__":
    main()
