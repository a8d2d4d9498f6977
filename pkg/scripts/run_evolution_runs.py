#!/usr/bin/env python3
"""Seeded evolution runs: objective trajectories and fixed-point checks.

Acceptance-scale defaults: 100 runs of up to 20 iterations with mock
providers. The emitted CSV holds one row per (run, iteration).
"""

import argparse
import csv
import sys
from pathlib import Path

from skillgraph.harness import run_evolution_suite


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=100)
    parser.add_argument("--iters", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--budget", type=int, default=6)
    parser.add_argument("--out", default="sim_out/prop2.csv")
    args = parser.parse_args()

    records, rows, summary = run_evolution_suite(
        runs=args.runs, iterations=args.iters, seed=args.seed, budget=args.budget)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=["run", "iteration", "J"])
        writer.writeheader()
        writer.writerows(rows)
    print(summary)
    plateaus = sum(1 for r in records if len(set(r.fingerprints[-2:])) == 1
                   and len(r.fingerprints) > 1)
    print(f"runs ending on a stable committed pair: {plateaus}/{len(records)}")
    print(f"rows: {len(rows)} -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
