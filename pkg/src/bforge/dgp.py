"""Synthetic data generators for the benchmarks.

Three processes: a deterministic "timing" matrix whose only job is to feed
throughput runs without blowing memory, an easy smooth additive signal with
low noise, and a harder dense-linear-plus-banded-quadratic signal whose
terms are standardized to unit sample variance over train and test jointly.
Formulas index rows and columns from 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

EASY_NOISE_SD = 0.1
QUADRATIC_BAND_HALF_WIDTH = 5


@dataclass(frozen=True)
class DgpSpec:
    """A named dataset recipe for the CLI."""

    kind: str  # "timing" | "easy" | "quadratic"
    n: int
    p: int
    seed: int = 0
    n_test: int = 0
    noise_sd: float = EASY_NOISE_SD

    def __post_init__(self):
        if self.kind not in ("timing", "easy", "quadratic"):
            raise ValueError(f"unknown dgp kind {self.kind!r}")
        if self.n < 2 or self.p < 1 or self.n_test < 0:
            raise ValueError("need n >= 2, p >= 1, n_test >= 0")


class Dataset(NamedTuple):
    X: np.ndarray
    y: np.ndarray
    f_true: np.ndarray | None


def gen_timing(n: int, p: int) -> Dataset:
    """Deterministic inputs for throughput runs; no randomness involved.

    ``y_i = cos(2*n*pi/32 * (i-1)/(n-1))`` and ``X_ij = (i + (p+1)*j) mod
    256`` with 1-based i, j.  The running time of the sampler does not
    depend on data values, so the shape of y is irrelevant.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    i = np.arange(1, n + 1)
    j = np.arange(1, p + 1)
    y = np.cos(2.0 * n * np.pi / 32.0 * (i - 1) / (n - 1))
    X = np.mod(i[:, None] + (p + 1) * j[None, :], 256).astype(np.float64)
    return Dataset(X=X, y=y, f_true=None)


def gen_easy(n: int, p: int, seed: int = 0, noise_sd: float = EASY_NOISE_SD) -> Dataset:
    """Smooth additive signal with low noise.

    ``X ~ U(-2, 2)`` i.i.d., ``f(x) = (1/sqrt(p)) * sum_j cos(pi * x_j)``,
    ``y = f + Normal(0, noise_sd**2)``.  Var[cos(pi U)] = 1/2 for
    U ~ U(-2, 2), so Var[f] = 1/2 regardless of p.
    """
    rng = np.random.default_rng(seed)
    X = rng.uniform(-2.0, 2.0, size=(n, p))
    f = np.cos(np.pi * X).sum(axis=1) / np.sqrt(p)
    y = f + rng.normal(0.0, noise_sd, size=n)
    return Dataset(X=X, y=y, f_true=f)


class SplitDataset(NamedTuple):
    X_train: np.ndarray
    y_train: np.ndarray
    f_train: np.ndarray
    X_test: np.ndarray
    y_test: np.ndarray
    f_test: np.ndarray


def gen_quadratic(n_train: int, n_test: int, p: int, seed: int = 0) -> SplitDataset:
    """Dense linear term plus banded quadratic term, unit noise.

    ``X ~ U(0, 1)``; coefficients ``beta_j ~ N(0, 1)``;
    ``A_jk ~ N(0, 1)`` when the circular distance
    ``min(|j - k|, p - |j - k|)`` is below 5, else 0.  The linear and
    quadratic terms are each standardized to unit sample variance over the
    train and test rows jointly (a deliberate, slightly improper step), so
    the total variance of y sits near 3.
    """
    if p < 1 or n_train < 1 or n_test < 0:
        raise ValueError("need p >= 1, n_train >= 1, n_test >= 0")
    rng = np.random.default_rng(seed)
    n = n_train + n_test
    X = rng.uniform(0.0, 1.0, size=(n, p))
    beta = rng.normal(size=p)
    A = rng.normal(size=(p, p))
    j = np.arange(p)
    dist = np.abs(j[:, None] - j[None, :])
    band = np.minimum(dist, p - dist) < QUADRATIC_BAND_HALF_WIDTH
    A *= band

    linear = X @ beta
    quadratic = np.einsum("ij,ij->i", X @ A, X)
    linear = linear / linear.std()
    quadratic = quadratic / quadratic.std()
    noise = rng.normal(size=n)

    f = linear + quadratic
    y = f + noise
    return SplitDataset(
        X_train=X[:n_train],
        y_train=y[:n_train],
        f_train=f[:n_train],
        X_test=X[n_train:],
        y_test=y[n_train:],
        f_test=f[n_train:],
    )
