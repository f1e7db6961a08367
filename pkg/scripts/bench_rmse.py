"""Desk-scale accuracy sweep: out-of-sample RMSE vs training size.

Fits the easy and quadratic synthetic processes over a size series for one
plan variant and writes a CSV (1000 test points per cell).

Usage: python scripts/bench_rmse.py [--plan low] [--ns 500,1000,2000]
"""

import argparse
import pathlib

from bforge import bench, cli


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--plan", choices=bench.PLAN_NAMES, default="low")
    parser.add_argument("--ns", default="500,1000,2000,4000")
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--nburn", type=int, default=1000)
    parser.add_argument("--nkept", type=int, default=1000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = bench.make_plan(args.plan, [int(v) for v in args.ns.split(",")])
    rows = bench.bench_rmse(plan, seed=args.seed, n_burn=args.nburn, n_kept=args.nkept)
    out = out_dir / f"rmse_{args.plan}.csv"
    cli._write_csv(str(out), bench.RMSE_FIELDS, rows)
    for row in rows:
        print(row)


if __name__ == "__main__":
    main()
