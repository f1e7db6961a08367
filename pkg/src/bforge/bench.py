"""Benchmark harnesses: time per sampler iteration and out-of-sample error.

Timing cells measure only warmed-up iterations (median wall-clock time over
the measured ones, monotonic clock); initialization is excluded.  Cells
whose estimated memory footprint exceeds the budget are skipped with a
reason instead of run.  The timing data generator is deterministic, and
because the sampler is branchless its running time does not depend on the
data anyway.
"""

from __future__ import annotations

import statistics
import time
from collections import Counter
from dataclasses import dataclass

import numpy as np

from bforge import dgp, opcount, sampler
from bforge.grid import build_grid_uniform, quantize
from bforge.regression import FitConfig, derive_hyperparams, fit

PLAN_NAMES = ("low", "high-p", "high-trees", "high-both")

TIME_FIELDS = ("n", "p", "m", "seconds_per_iteration", "bytes_estimated", "status", "detail")
RMSE_FIELDS = ("n", "p", "m", "dgp", "train_rmse", "test_rmse", "acceptance_rate", "mean_leaves_per_tree")

#: Float vectors of length n the sampler keeps in flight (response, residuals,
#: and float64 scratch), counted as 4-byte units for the memory estimate.
FLOAT_VECTOR_OVERHEAD = 12


@dataclass(frozen=True)
class BenchCell:
    n: int
    p: int
    m: int


@dataclass(frozen=True)
class BenchPlan:
    cells: tuple[BenchCell, ...]
    warmup: int = 3
    measured: int = 10

    def __post_init__(self):
        if self.warmup < 1 or self.measured < 1:
            raise ValueError("warmup and measured iteration counts must be >= 1")
        ns = [c.n for c in self.cells]
        if ns != sorted(ns):
            raise ValueError("plan cells must be sorted by n")


def make_plan(name: str, ns: list[int], warmup: int = 3, measured: int = 10) -> BenchPlan:
    """Build a plan from a size series: 'low' fixes p=100, m=200; the
    'high' variants scale p = n/10 and/or m = n/8 with n."""
    if name not in PLAN_NAMES:
        raise ValueError(f"plan must be one of {PLAN_NAMES}, got {name!r}")
    cells = []
    for n in sorted(ns):
        p = max(1, n // 10) if name in ("high-p", "high-both") else 100
        m = max(1, n // 8) if name in ("high-trees", "high-both") else 200
        cells.append(BenchCell(n=n, p=p, m=m))
    return BenchPlan(cells=tuple(cells), warmup=warmup, measured=measured)


@dataclass(frozen=True)
class MemoryEstimate:
    """Predicted footprint of one cell's sampler state."""

    byte_matrices: int  # quantized predictors (n*p) + leaf-index cache (n*m)
    float_overhead: int

    @property
    def total(self) -> int:
        return self.byte_matrices + self.float_overhead


def estimate_bytes(n: int, p: int, m: int) -> MemoryEstimate:
    return MemoryEstimate(byte_matrices=n * (p + m), float_overhead=4 * n * FLOAT_VECTOR_OVERHEAD)


def _timing_state(cell: BenchCell, seed: int):
    X, y, _ = dgp.gen_timing(cell.n, cell.p)
    grid = build_grid_uniform(X, 100)
    config = FitConfig(n_trees=cell.m, n_chains=1, seed=seed)
    hp, yscale = derive_hyperparams(y, config)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    quantized = quantize(X, grid)
    state = sampler.init_state(quantized.data, grid.counts, yscale.forward(y).astype(np.float32), hp, rng)
    return state, hp, quantized


def bench_time(plan: BenchPlan, budget_bytes: int | None = None, seed: int = 0) -> tuple[list[dict], list[Counter]]:
    """Per-iteration wall time for each plan cell.

    Returns (rows, op_tallies): one row per cell with the TIME_FIELDS
    schema, and one tally of the array work done during the measured
    iterations (empty for skipped cells).
    """
    rows: list[dict] = []
    tallies: list[Counter] = []
    for cell in plan.cells:
        est = estimate_bytes(cell.n, cell.p, cell.m)
        row = {"n": cell.n, "p": cell.p, "m": cell.m, "bytes_estimated": est.total}
        if budget_bytes is not None and est.total > budget_bytes:
            row.update(seconds_per_iteration="", status="skipped", detail=f"estimated {est.total} bytes over budget {budget_bytes}")
            rows.append(row)
            tallies.append(Counter())
            continue
        state, hp, quantized = _timing_state(cell, seed)
        assert quantized.data.nbytes + state.leaf_index.nbytes == est.byte_matrices
        for _ in range(plan.warmup):
            sampler.step(state, hp)
        times = []
        with opcount.collect() as ops:
            for _ in range(plan.measured):
                start = time.perf_counter()
                sampler.step(state, hp)
                times.append(time.perf_counter() - start)
        row.update(seconds_per_iteration=statistics.median(times), status="ok", detail="")
        rows.append(row)
        tallies.append(ops)
    return rows, tallies


def _rmse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sqrt(np.mean((np.asarray(a) - np.asarray(b)) ** 2)))


def bench_rmse(
    plan: BenchPlan,
    n_test: int = 1000,
    seed: int = 0,
    n_burn: int = 1000,
    n_kept: int = 1000,
    kinds: tuple[str, ...] = ("easy", "quadratic"),
) -> list[dict]:
    """Out-of-sample error of full fits on the synthetic processes.

    One row per (cell, dgp) with the RMSE_FIELDS schema; RMSEs are against
    the observed responses.
    """
    rows = []
    for cell in plan.cells:
        for kind in kinds:
            if kind == "easy":
                data = dgp.gen_easy(cell.n + n_test, cell.p, seed=seed)
                X_train, y_train = data.X[: cell.n], data.y[: cell.n]
                X_test, y_test = data.X[cell.n :], data.y[cell.n :]
            elif kind == "quadratic":
                q = dgp.gen_quadratic(cell.n, n_test, cell.p, seed=seed)
                X_train, y_train, X_test, y_test = q.X_train, q.y_train, q.X_test, q.y_test
            else:
                raise ValueError(f"unknown dgp kind {kind!r}")
            config = FitConfig(n_trees=cell.m, n_burn=n_burn, n_kept=n_kept, n_chains=1, seed=seed)
            trace = fit(X_train, y_train, config, X_test=X_test)
            train_hat = trace.yhat_train.mean(axis=(0, 1))
            test_hat = trace.yhat_test.mean(axis=(0, 1))
            rows.append(
                {
                    "n": cell.n,
                    "p": cell.p,
                    "m": cell.m,
                    "dgp": kind,
                    "train_rmse": _rmse(train_hat, y_train),
                    "test_rmse": _rmse(test_hat, y_test),
                    "acceptance_rate": float(trace.accepted.mean()),
                    "mean_leaves_per_tree": float(trace.mean_leaves.mean()),
                }
            )
    return rows
