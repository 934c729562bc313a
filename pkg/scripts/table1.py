"""Fitted constant under uniform and Gilbert-Elliott (B = 2, 3, 4) losses.

    python3 scripts/table1.py --out results/table1.json
"""

import argparse
import os

from rcclab.experiments import SweepConfig, table1, table1_to_json


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/table1.json")
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--variant", default="rcc+", choices=["rcc", "rcc+"])
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    cfg = SweepConfig(seeds=args.seeds, variant=args.variant, workers=args.workers)
    table = table1(cfg)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "w") as fh:
        fh.write(table1_to_json(table, cfg) + "\n")
    print(f"{'loss model':10s} {'C':>7s} {'slope':>7s} {'RTOs':>5s}")
    for name, entry in table.items():
        print(f"{name:10s} {entry.fit.c_hat:7.3f} {entry.fit.slope_hat:7.3f} {entry.rto_total:5d}")


if __name__ == "__main__":
    main()
