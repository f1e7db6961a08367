"""Cutpoint grids and predictor quantization.

Decision rules only ever compare a predictor against a finite per-axis set
of cutpoints, so each raw value can be replaced by the number of cutpoints
at or below it.  With at most 255 cutpoints per axis the quantized matrix is
one byte per entry, and the integer comparison ``index >= c`` reproduces the
real-valued comparison ``value >= S[c]`` for every grid cutpoint ``S[c]``
(cutpoints are 1-based; index 0 means "below the first cutpoint").
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Hard cap on cutpoints per axis so grid indices fit in one byte.
MAX_CUTPOINTS = 255


@dataclass
class CutpointGrid:
    """Per-axis sorted cutpoints.

    Axes with fewer than two distinct observed values get an empty cutpoint
    list and are flagged degenerate; they can never be split on.
    """

    cutpoints: list[np.ndarray]

    @property
    def n_axes(self) -> int:
        return len(self.cutpoints)

    @property
    def counts(self) -> np.ndarray:
        """Number of cutpoints per axis, shape ``(p,)``."""
        return np.array([s.size for s in self.cutpoints], dtype=np.int64)

    @property
    def degenerate(self) -> np.ndarray:
        """Boolean mask of axes that cannot be split."""
        return self.counts == 0


@dataclass
class QuantizedMatrix:
    """Predictors as 8-bit grid indices.

    ``data[i, j] == k`` means row i lies between cutpoints k and k+1 of axis
    j (0 = below the first cutpoint).  The payload is exactly ``n * p``
    bytes.
    """

    data: np.ndarray
    grid: CutpointGrid = field(repr=False)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def p(self) -> int:
        return self.data.shape[1]


def _column_bounds(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d predictor matrix, got shape {X.shape}")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 rows to build a cutpoint grid")
    if not np.isfinite(X).all():
        raise ValueError("predictors must be finite")
    return X.min(axis=0), X.max(axis=0)


def build_grid_uniform(X: np.ndarray, n_cutpoints: int = 100) -> CutpointGrid:
    """Equally spaced cutpoints strictly inside each axis's observed range.

    For an axis with range [lo, hi], places `n_cutpoints` points at
    ``lo + (hi - lo) * k / (n_cutpoints + 1)`` for k = 1..n_cutpoints, so
    every cutpoint can separate data.  Constant axes become degenerate.
    """
    if not 1 <= n_cutpoints <= MAX_CUTPOINTS:
        raise ValueError(f"n_cutpoints must be in [1, {MAX_CUTPOINTS}], got {n_cutpoints}")
    X = np.asarray(X, np.float64)
    lo, hi = _column_bounds(X)
    fractions = np.arange(1, n_cutpoints + 1) / (n_cutpoints + 1)
    cutpoints = []
    for j in range(X.shape[1]):
        if lo[j] == hi[j]:
            cutpoints.append(np.empty(0, np.float64))
        else:
            cutpoints.append(lo[j] + (hi[j] - lo[j]) * fractions)
    return CutpointGrid(cutpoints)


def build_grid_midpoints(X: np.ndarray) -> CutpointGrid:
    """Cutpoints midway between consecutive distinct observed values.

    Axes with more than 255 midpoints are thinned to 255 by keeping evenly
    spaced ranks of the full midpoint list, so every kept cutpoint is one of
    the true midpoints.  Single-valued axes become degenerate.
    """
    X = np.asarray(X, np.float64)
    _column_bounds(X)
    cutpoints = []
    for j in range(X.shape[1]):
        distinct = np.unique(X[:, j])
        if distinct.size < 2:
            cutpoints.append(np.empty(0, np.float64))
            continue
        mids = 0.5 * (distinct[:-1] + distinct[1:])
        if mids.size > MAX_CUTPOINTS:
            ranks = np.round(np.linspace(0, mids.size - 1, MAX_CUTPOINTS)).astype(np.int64)
            mids = mids[ranks]
        cutpoints.append(mids)
    return CutpointGrid(cutpoints)


def quantize(X: np.ndarray, grid: CutpointGrid) -> QuantizedMatrix:
    """Replace each raw value by the number of grid cutpoints <= it.

    Ties go right: a value equal to cutpoint ``S[k]`` maps to index k, so
    ``index >= c`` iff ``value >= S[c]``.  Values outside the training range
    clamp to the extreme cells automatically.
    """
    X = np.asarray(X, np.float64)
    if X.ndim != 2 or X.shape[1] != grid.n_axes:
        raise ValueError(f"predictor matrix shape {X.shape} does not match grid with p={grid.n_axes}")
    data = np.empty(X.shape, np.uint8)
    for j, cuts in enumerate(grid.cutpoints):
        data[:, j] = np.searchsorted(cuts, X[:, j], side="right")
    return QuantizedMatrix(data=data, grid=grid)
