"""Desk-scale timing sweep: seconds per sampler iteration vs training size.

Runs the four plan variants over a geometric size series, honoring a memory
budget, and writes one CSV per plan.

Usage: python scripts/bench_time.py [--out-dir results] [--budget-gb 2]
"""

import argparse
import pathlib

from bforge import bench, cli


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="results")
    parser.add_argument("--ns", default="1000,2000,4000,8000,16000,32000,64000")
    parser.add_argument("--budget-gb", type=float, default=2.0)
    parser.add_argument("--warmup", type=int, default=2)
    parser.add_argument("--iters", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    out_dir = pathlib.Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ns = [int(v) for v in args.ns.split(",")]
    budget = int(args.budget_gb * 2**30)
    for plan_name in bench.PLAN_NAMES:
        plan = bench.make_plan(plan_name, ns, warmup=args.warmup, measured=args.iters)
        rows, _ = bench.bench_time(plan, budget_bytes=budget, seed=args.seed)
        out = out_dir / f"time_{plan_name}.csv"
        cli._write_csv(str(out), bench.TIME_FIELDS, rows)
        print(f"{plan_name}:")
        for row in rows:
            print(f"  {row}")


if __name__ == "__main__":
    main()
