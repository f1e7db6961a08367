"""Command-line front end.

Subcommands: ``fit`` (train on a CSV, write a trace container and a summary
CSV), ``predict`` (evaluate a saved trace at new points), ``diagnose``
(chain health of a saved trace), ``gen`` (write synthetic datasets to CSV),
``bench-time`` and ``bench-rmse`` (benchmark reports).

CSV conventions: input files carry a header row and numeric columns; the
response column of training files is named with --response.  Summary CSVs
have the header ``point,mean,sd,lo<level>,hi<level>``; benchmark CSVs use
the schemas documented in `bforge.bench` and are safe to append across
runs.  Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from bforge import bench, dgp, serialize
from bforge.regression import DegenerateDataError, FitConfig, diagnostics, fit, predict


class UsageError(Exception):
    pass


def _read_csv(path: str) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
    except FileNotFoundError:
        raise UsageError(f"cannot read {path}: no such file")
    except (ValueError, StopIteration) as exc:
        raise UsageError(f"malformed CSV {path}: {exc}")
    if not rows:
        raise UsageError(f"{path} has no data rows")
    return header, np.asarray(rows, np.float64)


def _write_csv(path: str, fields: tuple[str, ...], rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def _split_response(header: list[str], data: np.ndarray, response: str) -> tuple[np.ndarray, np.ndarray]:
    if response not in header:
        raise UsageError(f"response column {response!r} not in header {header}")
    idx = header.index(response)
    keep = [i for i in range(len(header)) if i != idx]
    return data[:, keep], data[:, idx]


def _summary_rows(pred, level: float) -> tuple[tuple[str, ...], list[dict]]:
    fields = ("point", "mean", "sd", f"lo{level:g}", f"hi{level:g}")
    lo, hi = pred.intervals[level]
    rows = [
        {
            "point": i,
            "mean": pred.mean[i],
            "sd": pred.sd[i],
            f"lo{level:g}": lo[i],
            f"hi{level:g}": hi[i],
        }
        for i in range(pred.mean.size)
    ]
    return fields, rows


def _config_from_args(args: argparse.Namespace) -> FitConfig:
    return FitConfig(
        n_trees=args.ntree,
        n_burn=args.nburn,
        n_kept=args.nkept,
        max_depth=args.depth,
        grid=args.grid,
        n_cutpoints=args.cutpoints,
        seed=args.seed,
        n_chains=args.chains,
    )


def _print_report(report) -> None:
    print(f"acceptance rate: {report.acceptance_rate:.3f}" + (" (low!)" if report.low_acceptance_flag else ""))
    print(f"mean leaves per tree: {report.mean_leaves_per_tree:.2f}" + (" (above 10!)" if report.deep_trees_flag else ""))
    print(f"cross-chain KS at {len(report.check_points)} points: {report.cross_chain_ks:.3f}")


def cmd_fit(args: argparse.Namespace) -> int:
    header, data = _read_csv(args.train)
    X, y = _split_response(header, data, args.response)
    X_test = None
    if args.test:
        test_header, test_data = _read_csv(args.test)
        expected = [h for h in header if h != args.response]
        if test_header == header:
            X_test, _ = _split_response(test_header, test_data, args.response)
        elif test_header == expected:
            X_test = test_data
        else:
            raise UsageError(f"test header {test_header} does not match training predictors {expected}")
    config = _config_from_args(args)
    if args.keep_forests:
        config = FitConfig(**{**config.__dict__, "keep_forests": True})
    trace = fit(X, y, config, X_test=X_test)
    serialize.save_trace(args.out, trace)
    print(f"wrote trace to {args.out}")
    if args.summary:
        if trace.yhat_test is not None:
            values = trace.yhat_test.reshape(-1, trace.yhat_test.shape[-1])
        else:
            values = trace.yhat_train.reshape(-1, trace.yhat_train.shape[-1])
        from bforge.regression import _summarize

        fields, rows = _summary_rows(_summarize(values, (args.level,)), args.level)
        _write_csv(args.summary, fields, rows)
        print(f"wrote summary to {args.summary}")
    if config.n_chains >= 2:
        _print_report(diagnostics(trace))
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    trace = serialize.load_trace(args.model)
    header, data = _read_csv(args.test)
    if args.response and args.response in header:
        data, _ = _split_response(header, data, args.response)
    pred = predict(trace, data, levels=(args.level,))
    fields, rows = _summary_rows(pred, args.level)
    _write_csv(args.out, fields, rows)
    print(f"wrote {len(rows)} prediction rows to {args.out}")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    trace = serialize.load_trace(args.model)
    _print_report(diagnostics(trace))
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    if args.dgp == "timing":
        data = dgp.gen_timing(args.n, args.p)
        train = (data.X, data.y)
        test = None
    elif args.dgp == "easy":
        data = dgp.gen_easy(args.n + args.ntest, args.p, seed=args.seed)
        train = (data.X[: args.n], data.y[: args.n])
        test = (data.X[args.n :], data.y[args.n :]) if args.ntest else None
    else:
        q = dgp.gen_quadratic(args.n, args.ntest, args.p, seed=args.seed)
        train = (q.X_train, q.y_train)
        test = (q.X_test, q.y_test) if args.ntest else None

    def write(path: str, X: np.ndarray, y: np.ndarray) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"x{j + 1}" for j in range(X.shape[1])] + ["y"])
            for i in range(X.shape[0]):
                writer.writerow(list(X[i]) + [y[i]])

    write(args.out, *train)
    print(f"wrote {train[0].shape[0]} rows to {args.out}")
    if test is not None and args.test_out:
        write(args.test_out, *test)
        print(f"wrote {test[0].shape[0]} rows to {args.test_out}")
    return 0


def cmd_bench_time(args: argparse.Namespace) -> int:
    ns = [int(v) for v in args.ns.split(",")]
    plan = bench.make_plan(args.plan, ns, warmup=args.warmup, measured=args.iters)
    rows, _ = bench.bench_time(plan, budget_bytes=args.budget_bytes, seed=args.seed)
    _write_csv(args.out, bench.TIME_FIELDS, rows)
    for row in rows:
        print(row)
    return 0


def cmd_bench_rmse(args: argparse.Namespace) -> int:
    ns = [int(v) for v in args.ns.split(",")]
    plan = bench.make_plan(args.plan, ns)
    rows = bench.bench_rmse(plan, n_test=args.ntest, seed=args.seed, n_burn=args.nburn, n_kept=args.nkept)
    _write_csv(args.out, bench.RMSE_FIELDS, rows)
    for row in rows:
        print(row)
    return 0


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ntree", type=int, default=200)
    p.add_argument("--nburn", type=int, default=1000)
    p.add_argument("--nkept", type=int, default=1000)
    p.add_argument("--depth", type=int, default=6)
    p.add_argument("--grid", choices=("uniform", "midpoints"), default="uniform")
    p.add_argument("--cutpoints", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bforge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a CSV dataset and save the trace")
    p.add_argument("--train", required=True)
    p.add_argument("--response", required=True)
    p.add_argument("--test")
    p.add_argument("--out", required=True)
    p.add_argument("--summary")
    p.add_argument("--level", type=float, default=0.9)
    p.add_argument("--keep-forests", action="store_true")
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict at new points from a saved trace")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--response", help="column to drop from the test CSV if present")
    p.add_argument("--out", required=True)
    p.add_argument("--level", type=float, default=0.9)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("diagnose", help="chain health of a saved trace")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("gen", help="write a synthetic dataset to CSV")
    p.add_argument("--dgp", choices=("timing", "easy", "quadratic"), required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--ntest", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--test-out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("bench-time", help="seconds per sampler iteration across sizes")
    p.add_argument("--plan", choices=bench.PLAN_NAMES, default="low")
    p.add_argument("--ns", required=True, help="comma-separated training sizes")
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--budget-bytes", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_time)

    p = sub.add_parser("bench-rmse", help="out-of-sample error across sizes")
    p.add_argument("--plan", choices=bench.PLAN_NAMES, default="low")
    p.add_argument("--ns", required=True)
    p.add_argument("--ntest", type=int, default=1000)
    p.add_argument("--nburn", type=int, default=1000)
    p.add_argument("--nkept", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_rmse)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DegenerateDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
