#!/usr/bin/env python3
"""Rewrite-strategy ablation: selective drill-down vs parent-only vs rewrite-all."""

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

from skillgraph.harness import ABLATION_SIM, run_rewrite_ablation


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--tasks", type=int, default=12)
    parser.add_argument("--out", default="sim_out/ablation.csv")
    args = parser.parse_args()

    sim = replace(ABLATION_SIM, task_count=args.tasks)
    rows, summary = run_rewrite_ablation(seed=args.seed, sim=sim)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(summary)
    print(f"rows: {len(rows)} -> {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
