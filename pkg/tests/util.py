"""Shared construction helpers for sampler tests."""

from __future__ import annotations

import numpy as np

from bforge import sampler
from bforge.trees import Forest, traverse_forest


def make_state(X, max_cuts, y, hp, forest: Forest | None = None, sigma2=None, seed=0, rng=None):
    """Sampler state around an optional hand-built forest."""
    if rng is None:
        rng = np.random.default_rng(seed)
    state = sampler.init_state(np.asarray(X, np.uint8), max_cuts, y, hp, rng, sigma2=sigma2)
    if forest is not None:
        state.forest = forest
        state.leaf_index = traverse_forest(forest, state.X)
        state.rebuild_structure_caches()
        pred = np.zeros(state.n_points, np.float64)
        for j in range(forest.n_trees):
            pred += forest.leaf_value[j, state.leaf_index[:, j]]
        state.resid = (state.y.astype(np.float64) - pred).astype(np.float32)
    return state


def forest_from_trees(trees_list, max_depth) -> Forest:
    return Forest(
        np.stack([t.axis for t in trees_list]),
        np.stack([t.cutpoint for t in trees_list]),
        np.stack([t.leaf_value for t in trees_list]),
        max_depth,
    )
