"""Fit the easy synthetic benchmark and print a short report.

Usage: python scripts/demo_fit.py [--n 2000] [--p 10] [--quick]
"""

import argparse
import time

import numpy as np

from bforge import dgp
from bforge.regression import FitConfig, diagnostics, fit


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=2000)
    parser.add_argument("--p", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quick", action="store_true", help="short chains for a fast smoke run")
    args = parser.parse_args()

    data = dgp.gen_easy(args.n + 1000, args.p, seed=args.seed)
    X_train, y_train, f_train = data.X[: args.n], data.y[: args.n], data.f_true[: args.n]
    X_test, y_test, f_test = data.X[args.n :], data.y[args.n :], data.f_true[args.n :]

    burn, kept = (100, 100) if args.quick else (1000, 1000)
    config = FitConfig(n_burn=burn, n_kept=kept, seed=args.seed, n_chains=2)
    start = time.perf_counter()
    trace = fit(X_train, y_train, config, X_test=X_test)
    elapsed = time.perf_counter() - start

    pred = trace.yhat_test.mean(axis=(0, 1))
    rmse_truth = np.sqrt(np.mean((pred - f_test) ** 2))
    rmse_y = np.sqrt(np.mean((pred - y_test) ** 2))
    report = diagnostics(trace)

    print(f"fit {args.n} x {args.p} in {elapsed:.1f}s ({burn}+{kept} iterations, 2 chains)")
    print(f"test RMSE vs truth: {rmse_truth:.4f}   vs observed: {rmse_y:.4f}   (noise sd 0.1)")
    print(f"posterior sigma mean: {trace.sigma.mean():.4f}")
    print(f"acceptance rate: {report.acceptance_rate:.3f}   mean leaves/tree: {report.mean_leaves_per_tree:.2f}")
    print(f"cross-chain KS: {report.cross_chain_ks:.3f}")


if __name__ == "__main__":
    main()
