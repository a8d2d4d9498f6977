#!/usr/bin/env python3
"""Traversal-scaling experiment at full scale: mean visits vs tree size.

Equivalent to ``python -m skillgraph simulate prop1`` with acceptance-scale
defaults (1000 trials at sizes 63 / 1023 / 65535).
"""

import argparse
import csv
import sys
from pathlib import Path

from skillgraph.harness import run_traversal_scaling
from skillgraph.synthetic import SimConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=777)
    parser.add_argument("--trials", type=int, default=1000)
    parser.add_argument("--rho", type=float, default=0.25)
    parser.add_argument("--branching", type=int, default=2)
    parser.add_argument("--sizes", default="63,1023,65535")
    parser.add_argument("--out", default="sim_out/prop1.csv")
    args = parser.parse_args()

    sim = SimConfig(seed=args.seed, trials=args.trials, decompose_prob=args.rho,
                    branching=args.branching,
                    tree_sizes=tuple(int(x) for x in args.sizes.split(",")))
    _, rows, summary = run_traversal_scaling(sim)
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
