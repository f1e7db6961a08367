"""High-level fit / predict / diagnostics interface.

`fit` builds the cutpoint grid, quantizes the predictors, derives
data-driven hyperparameters (responses are shifted and scaled to
[-0.5, 0.5]), runs one or more independent chains, and returns a `Trace` of
kept posterior draws.  `predict` evaluates kept forests at new points;
`diagnostics` summarizes acceptance, tree sizes, and cross-chain agreement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from bforge import grid as gridmod
from bforge import sampler, trees


class DegenerateDataError(ValueError):
    """Raised when the data cannot support a fit (constant response, no usable axis)."""


@dataclass(frozen=True)
class FitConfig:
    """Everything `fit` needs besides the data.

    `keep_forests=None` resolves to True exactly when no test matrix is
    passed at fit time, so prediction at new points stays possible without
    retaining every forest on large runs.
    """

    n_trees: int = 200
    n_burn: int = 1000
    n_kept: int = 1000
    thinning: int = 1
    max_depth: int = 6
    grid: str = "uniform"  # "uniform" or "midpoints"
    n_cutpoints: int = 100
    seed: int = 0
    k: float = 2.0  # leaf-prior scale divisor: leaf_sd = 0.5 / (k * sqrt(n_trees))
    q: float = 0.90  # error-prior mass placed below the sample variance
    nu: float = 3.0
    n_chains: int = 2
    alpha: float = 0.95
    beta: float = 2.0
    p_grow: float = 0.5
    keep_forests: Optional[bool] = None

    def __post_init__(self):
        if min(self.n_trees, self.n_kept, self.thinning, self.n_chains, self.max_depth) < 1:
            raise ValueError("n_trees, n_kept, thinning, n_chains, max_depth must be positive")
        if self.n_burn < 0:
            raise ValueError("n_burn must be >= 0")
        if self.grid not in ("uniform", "midpoints"):
            raise ValueError(f"grid must be 'uniform' or 'midpoints', got {self.grid!r}")


@dataclass(frozen=True)
class YScale:
    """Affine map taking raw responses to the internal [-0.5, 0.5] scale."""

    center: float
    scale: float

    def forward(self, y: np.ndarray) -> np.ndarray:
        return (np.asarray(y, np.float64) - self.center) / self.scale

    def inverse(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f, np.float64) * self.scale + self.center


@dataclass
class Trace:
    """Kept posterior draws plus everything needed to reuse them.

    Arrays are indexed (chain, draw, ...).  `sigma` and the function values
    are on the original response scale.  `forests` is None when forests were
    not retained; `yhat_test` is None when no test matrix was supplied.
    """

    config: FitConfig
    yscale: YScale
    grid: gridmod.CutpointGrid = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    yhat_train: np.ndarray = field(repr=False)
    yhat_test: Optional[np.ndarray] = field(repr=False)
    accepted: np.ndarray = field(repr=False)  # (chains, total iterations, trees) bool
    mean_leaves: np.ndarray = field(repr=False)  # (chains, draws)
    forests: Optional[list[list[trees.Forest]]] = field(repr=False)
    x_test: Optional[np.ndarray] = field(repr=False)

    @property
    def n_chains(self) -> int:
        return self.sigma.shape[0]

    @property
    def n_kept(self) -> int:
        return self.sigma.shape[1]


def derive_hyperparams(y: np.ndarray, config: FitConfig) -> tuple[sampler.Hyperparams, YScale]:
    """Data-driven hyperparameters and the response scaling that goes with them.

    The response range maps to exactly 1 so leaves get prior mean 0 and
    standard deviation ``0.5 / (k * sqrt(n_trees))``; the error-variance
    scale `lam` is set so the prior puts probability `q` below the sample
    variance of the scaled response.
    """
    y = np.asarray(y, np.float64)
    if y.size < 2:
        raise DegenerateDataError("need at least 2 responses")
    if not np.isfinite(y).all():
        raise DegenerateDataError("responses must be finite")
    lo, hi = float(y.min()), float(y.max())
    if lo == hi:
        raise DegenerateDataError("response is constant; nothing to fit")
    yscale = YScale(center=(lo + hi) / 2.0, scale=hi - lo)
    y_scaled = yscale.forward(y)
    sample_var = float(np.var(y_scaled, ddof=1))
    # P(sigma2 <= v) = q  with  nu*lam/sigma2 ~ chi2(nu)
    lam = sample_var * float(stats.chi2.ppf(1.0 - config.q, config.nu)) / config.nu
    hp = sampler.Hyperparams(
        leaf_sd=0.5 / (config.k * np.sqrt(config.n_trees)),
        lam=lam,
        n_trees=config.n_trees,
        alpha=config.alpha,
        beta=config.beta,
        leaf_mean=0.0,
        nu=config.nu,
        max_depth=config.max_depth,
        p_grow=config.p_grow,
    )
    return hp, yscale


def _build_grid(X: np.ndarray, config: FitConfig) -> gridmod.CutpointGrid:
    if config.grid == "uniform":
        return gridmod.build_grid_uniform(X, config.n_cutpoints)
    return gridmod.build_grid_midpoints(X)


def fit(X: np.ndarray, y: np.ndarray, config: FitConfig = FitConfig(), X_test: np.ndarray | None = None) -> Trace:
    """Run the posterior sampler on (X, y) and return the kept draws.

    Chains use independent spawned random streams; the whole run is
    deterministic given `config.seed`.  Each chain runs ``n_burn`` burn-in
    iterations then ``n_kept * thinning`` more, keeping every
    `thinning`-th.
    """
    X = np.asarray(X, np.float64)
    y = np.asarray(y, np.float64)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.size:
        raise ValueError(f"inconsistent shapes: X {X.shape}, y {y.shape}")

    cutgrid = _build_grid(X, config)
    if bool(cutgrid.degenerate.all()):
        raise DegenerateDataError("every predictor is constant; no splits available")
    quantized = gridmod.quantize(X, cutgrid)
    hp, yscale = derive_hyperparams(y, config)
    y_scaled = yscale.forward(y).astype(np.float32)

    keep_forests = config.keep_forests
    if keep_forests is None:
        keep_forests = X_test is None
    Xq_test = None
    if X_test is not None:
        X_test = np.asarray(X_test, np.float64)
        Xq_test = gridmod.quantize(X_test, cutgrid).data

    n_iter = config.n_burn + config.n_kept * config.thinning
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)

    sigma = np.empty((config.n_chains, config.n_kept))
    yhat_train = np.empty((config.n_chains, config.n_kept, y.size))
    yhat_test = None if Xq_test is None else np.empty((config.n_chains, config.n_kept, Xq_test.shape[0]))
    accepted = np.empty((config.n_chains, n_iter, config.n_trees), bool)
    mean_leaves = np.empty((config.n_chains, config.n_kept))
    forests: Optional[list[list[trees.Forest]]] = [] if keep_forests else None

    for c, seed_seq in enumerate(seeds):
        rng = np.random.Generator(np.random.Philox(seed_seq))
        state = sampler.init_state(quantized.data, cutgrid.counts, y_scaled, hp, rng)
        chain_forests: list[trees.Forest] = []
        kept = 0
        for it in range(n_iter):
            sampler.step(state, hp)
            accepted[c, it] = state.last_accepted
            in_kept = it >= config.n_burn and (it - config.n_burn) % config.thinning == config.thinning - 1
            if in_kept:
                sigma[c, kept] = np.sqrt(state.sigma2) * yscale.scale
                values = trees.sum_leaf_values(state.forest.leaf_value, state.leaf_index)
                yhat_train[c, kept] = yscale.inverse(values)
                if yhat_test is not None:
                    yhat_test[c, kept] = yscale.inverse(trees.evaluate_forest(state.forest, Xq_test))
                mean_leaves[c, kept] = state.node_leaf.sum() / config.n_trees
                if keep_forests:
                    chain_forests.append(state.forest.copy())
                kept += 1
        if forests is not None:
            forests.append(chain_forests)

    return Trace(
        config=config,
        yscale=yscale,
        grid=cutgrid,
        sigma=sigma,
        yhat_train=yhat_train,
        yhat_test=yhat_test,
        accepted=accepted,
        mean_leaves=mean_leaves,
        forests=forests,
        x_test=X_test,
    )


@dataclass
class Prediction:
    """Per-draw function values and pointwise summaries, original scale."""

    values: np.ndarray  # (draws, points)
    mean: np.ndarray
    sd: np.ndarray
    intervals: dict[float, np.ndarray]  # level -> (2, points) lower/upper


def _summarize(values: np.ndarray, levels: tuple[float, ...]) -> Prediction:
    intervals = {}
    for level in levels:
        tail = (1.0 - level) / 2.0
        intervals[level] = np.quantile(values, [tail, 1.0 - tail], axis=0)
    return Prediction(values=values, mean=values.mean(axis=0), sd=values.std(axis=0, ddof=1), intervals=intervals)


def predict(trace: Trace, X_new: np.ndarray, levels: tuple[float, ...] = (0.9,)) -> Prediction:
    """Posterior function values at `X_new` for every kept draw.

    Requires retained forests, except that the exact test matrix supplied at
    fit time can reuse its precomputed values.
    """
    X_new = np.asarray(X_new, np.float64)
    if trace.forests is None:
        if trace.yhat_test is not None and trace.x_test is not None and X_new.shape == trace.x_test.shape and np.array_equal(X_new, trace.x_test):
            values = trace.yhat_test.reshape(-1, trace.yhat_test.shape[-1])
            return _summarize(values, levels)
        raise ValueError(
            "trace does not retain forests and X_new is not the test matrix "
            "supplied at fit time; refit with keep_forests=True"
        )
    Xq = gridmod.quantize(X_new, trace.grid).data
    values = np.empty((trace.n_chains * trace.n_kept, Xq.shape[0]))
    row = 0
    for chain in trace.forests:
        for forest in chain:
            values[row] = trace.yscale.inverse(trees.evaluate_forest(forest, Xq))
            row += 1
    return _summarize(values, levels)


@dataclass
class DiagnosticsReport:
    """Chain health summary.

    `cross_chain_ks` is the largest two-sample Kolmogorov-Smirnov statistic
    across chain pairs and check points of the posterior function-value
    distributions; identical chains give exactly 0.
    """

    acceptance_rate: float
    acceptance_per_tree: np.ndarray
    mean_leaves_per_tree: float
    deep_trees_flag: bool  # average leaves per tree above 10
    low_acceptance_flag: bool  # overall acceptance below 5%
    cross_chain_ks: float
    check_points: np.ndarray


def diagnostics(trace: Trace, points: np.ndarray | None = None) -> DiagnosticsReport:
    """Summarize acceptance, tree sizes, and cross-chain agreement.

    `points` indexes training rows at which chains' function-value
    distributions are compared; defaults to the first ``min(8, n)`` rows.
    """
    if trace.n_chains < 2:
        raise ValueError("diagnostics needs at least 2 chains")
    n = trace.yhat_train.shape[-1]
    if points is None:
        points = np.arange(min(8, n))
    points = np.asarray(points, np.int64)

    kept_window = trace.accepted[:, trace.config.n_burn :, :]
    per_tree = kept_window.mean(axis=(0, 1))
    overall = float(kept_window.mean())
    mean_leaves = float(trace.mean_leaves.mean())

    worst = 0.0
    for a in range(trace.n_chains):
        for b in range(a + 1, trace.n_chains):
            for pt in points:
                ks = stats.ks_2samp(trace.yhat_train[a, :, pt], trace.yhat_train[b, :, pt]).statistic
                worst = max(worst, float(ks))

    return DiagnosticsReport(
        acceptance_rate=overall,
        acceptance_per_tree=per_tree,
        mean_leaves_per_tree=mean_leaves,
        deep_trees_flag=mean_leaves > 10.0,
        low_acceptance_flag=overall < 0.05,
        cross_chain_ks=worst,
        check_points=points,
    )
