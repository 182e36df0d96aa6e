"""FCNN vs dualFCNN on the synthetic benchmark, seed by seed.

    python3 scripts/compare_archs.py --rho 0.10 --out runs/archs
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
    ap.add_argument("--strategies", default=",".join(STRATEGIES))
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--rho", type=float, default=0.10)
    ap.add_argument("--budget", type=int, default=2000)
    ap.add_argument("--rounds", type=int, default=4)
    ap.add_argument("--out", default="runs/archs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    seeds = [int(s) for s in args.seeds.split(",")]
    t0 = time.perf_counter()
    runs = run_grid(
        args.strategies.split(","), ["fcnn", "dualfcnn"], seeds, BenchmarkConfig(disagreement_rate=args.rho),
        args.budget, args.rounds, DESK_HIDDEN, DESK_PRE_CAP,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wins = 0
    with open(out / "per_seed.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "fcnn_mean", "dualfcnn_mean"])
        for s in seeds:
            f = np.mean([r.agreement for r in runs if r.seed == s and r.arch == "fcnn"])
            d = np.mean([r.agreement for r in runs if r.seed == s and r.arch == "dualfcnn"])
            wins += d >= f
            w.writerow([s, f"{f:.6f}", f"{d:.6f}"])
            print(f"seed {s}: fcnn {100 * f:.2f}  dualfcnn {100 * d:.2f}")
    print(f"dualfcnn >= fcnn in {wins}/{len(seeds)} seeds ({time.perf_counter() - t0:.0f}s) -> {out}")


if __name__ == "__main__":
    main()
