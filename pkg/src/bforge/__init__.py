"""Branchless, array-parallel Bayesian additive regression trees.

The regression function is a sum of fixed-depth decision trees stored as
implicit binary heaps, sampled from their posterior with a
Metropolis-within-Gibbs chain whose per-iteration work is a fixed sequence
of array operations (no data-dependent control flow in the hot path).
"""

from bforge.dgp import gen_easy, gen_quadratic, gen_timing
from bforge.grid import CutpointGrid, QuantizedMatrix, build_grid_midpoints, build_grid_uniform, quantize
from bforge.regression import FitConfig, Trace, derive_hyperparams, diagnostics, fit, predict
from bforge.sampler import Hyperparams, SamplerState, sample_prior_tree, step
from bforge.trees import Forest, TreeHeap, evaluate_forest, traverse, traverse_forest

__all__ = [
    "CutpointGrid",
    "FitConfig",
    "Forest",
    "Hyperparams",
    "QuantizedMatrix",
    "SamplerState",
    "Trace",
    "TreeHeap",
    "build_grid_midpoints",
    "build_grid_uniform",
    "derive_hyperparams",
    "diagnostics",
    "evaluate_forest",
    "fit",
    "gen_easy",
    "gen_quadratic",
    "gen_timing",
    "predict",
    "quantize",
    "sample_prior_tree",
    "step",
    "traverse",
    "traverse_forest",
]

__version__ = "0.1.0"
