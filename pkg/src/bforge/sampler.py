"""Metropolis-within-Gibbs sampler over a fixed-depth heap forest.

One `step` updates every tree's structure (a grow or prune move resolved by
a Metropolis test), redraws every leaf value from its conjugate conditional,
and finally redraws the error variance.  The work is organised so that
everything except the residual-dependent pieces runs as fixed-shape
operations over all trees at once:

  phase 1    propose one move per tree
  phase 2    point the leaf-index cache at the larger tree of each move
             (the grown tree for GROW, the current tree otherwise)
  phase 3    count points per heap node, per tree
  phases 4-6 posterior precisions and every acceptance-ratio term that does
             not involve residual sums
  phase 5    draw all random numbers as fixed-shape blocks
  phases 7-11 (sequential over trees, in index order): sum residuals per
             node, remove the current tree's contribution, finish the
             acceptance ratio, resolve the move, redraw the leaves, and
             update the residuals with old minus new predictions
  final      redraw the error variance from the summed squared residuals

The array work per iteration (traversal updates, indexed counts and sums,
residual updates, leaf draws) has extents fixed by (n, p, number of trees,
maximum depth); the per-tree proposal bookkeeping runs as compiled scalar
loops with fixed bounds and no data-dependent early exits.

RNG consumption per step is fixed given (number of trees m, heap size, and
the chi-square degrees of freedom): one (m, 5) uniform block [move coin,
leaf pick, axis pick, cut pick, prune pick], one (m,) acceptance-uniform
block, one (m, 2**D) standard-normal block for the leaves, then one
chi-square draw.  Whether a number is used never changes how many are
drawn.  Candidate lists (growable leaves, available axes, prunable nodes)
are ordered by index, and a pick among k candidates maps one uniform u to
``floor(u * k)``.

Availability is structural: the cutpoints available to a node along an axis
are the grid positions that still split its rectangle, an interval
``(lo, hi]`` of cutpoint indices determined by its ancestors' decisions.
The per-node intervals live in the state and are refreshed for the two
child slots of every resolved move; entries at nodes not present in a tree
hold junk and are always masked through the node-leaf flags.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from numba import njit

from bforge import opcount
from bforge.trees import Forest, TreeHeap, depth_table, heap_size

KIND_NONE = 0
KIND_GROW = 1
KIND_PRUNE = 2


@dataclass
class Hyperparams:
    """Model and sampler configuration.

    Attributes
    ----------
    leaf_sd
        Prior standard deviation of a single leaf value.
    lam
        Scale of the error-variance prior: nu * lam / sigma2 has a
        chi-square distribution with nu degrees of freedom.
    n_trees
        Number of trees in the ensemble.
    alpha, beta
        Depth profile of the tree prior: a node at depth d is a decision
        node with probability alpha / (1 + d)**beta while splits are
        available, forced to 0 at the deepest level.  Requires
        0 <= alpha < 1.
    leaf_mean
        Prior mean of a leaf value.
    nu
        Degrees of freedom of the error-variance prior.
    max_depth
        Maximum tree depth D (D = 1 is a root-only tree), at most 8.
    p_grow
        Probability of proposing GROW when both moves are possible; a
        root-only tree forces GROW and a tree with no growable leaf forces
        PRUNE.  Requires 0 < p_grow < 1.
    update_sigma
        When False the error variance is held fixed (the chi-square draw is
        still consumed so the random stream layout does not change).
    """

    leaf_sd: float
    lam: float
    n_trees: int = 200
    alpha: float = 0.95
    beta: float = 2.0
    leaf_mean: float = 0.0
    nu: float = 3.0
    max_depth: int = 6
    p_grow: float = 0.5
    update_sigma: bool = True


@lru_cache(maxsize=None)
def _depth_probs(alpha: float, beta: float, max_depth: int) -> np.ndarray:
    d = np.arange(max_depth, dtype=np.float64)
    probs = alpha / (1.0 + d) ** beta
    probs[-1] = 0.0
    probs.flags.writeable = False
    return probs


def depth_probabilities(hp: Hyperparams) -> np.ndarray:
    """Per-depth decision-node probabilities alpha/(1+d)**beta, 0 at the deepest level."""
    return _depth_probs(hp.alpha, hp.beta, hp.max_depth).copy()


@dataclass
class SamplerState:
    """Mutable chain state: forest, caches, error variance, RNG.

    Invariants between steps: ``leaf_index[i, j]`` equals a fresh traversal
    of tree j at row i exactly, and ``resid`` equals ``y`` minus the forest
    prediction up to bounded float32 drift.  ``avail_lo``/``avail_hi`` and
    the node flags are derived structure caches; `rebuild_structure_caches`
    recomputes them after any direct edit of the forest.
    """

    X: np.ndarray            # (n, p) uint8 grid indices
    max_cuts: np.ndarray     # (p,) cutpoints available per axis
    y: np.ndarray            # (n,) float32 response
    forest: Forest
    resid: np.ndarray        # (n,) float32
    leaf_index: np.ndarray   # (n, m) uint8
    sigma2: float
    rng: np.random.Generator
    node_present: np.ndarray   # (m, 2**D) bool
    node_leaf: np.ndarray      # (m, 2**D) bool
    avail_lo: np.ndarray       # (m, 2**D, p) uint8
    avail_hi: np.ndarray       # (m, 2**D, p) uint8
    node_can_split: np.ndarray  # (m, 2**D) bool
    iteration: int = 0
    last_accepted: Optional[np.ndarray] = None
    last_proposals: Optional["Proposals"] = None
    _depths: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._depths = depth_table(self.forest.max_depth)

    @property
    def n_points(self) -> int:
        return self.y.size

    def rebuild_structure_caches(self) -> None:
        """Recompute node flags and availability from the forest arrays."""
        from bforge.trees import present_mask

        forest = self.forest
        present = present_mask(forest.cutpoint, forest.max_depth)
        internal = np.zeros_like(present)
        internal[:, : forest.cutpoint.shape[1]] = forest.cutpoint > 0
        self.node_present = present
        self.node_leaf = present & ~internal
        self.avail_lo, self.avail_hi = availability_intervals(forest, self.max_cuts)
        self.node_can_split = (self.avail_hi > self.avail_lo).any(axis=2)


def availability_intervals(forest: Forest, max_cuts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per (tree, node, axis) interval (lo, hi] of available cutpoint indices.

    Full rebuild by descending the heap level by level; entries at nodes
    that are not present hold junk and must be masked by the caller.
    """
    m = forest.n_trees
    size = heap_size(forest.max_depth)
    p = max_cuts.size
    lo = np.zeros((m, size, p), np.uint8)
    hi = np.zeros((m, size, p), np.uint8)
    hi[:, 1, :] = np.asarray(max_cuts, np.int64).astype(np.uint8)
    rows_col = np.arange(m)[:, None]
    for d in range(forest.max_depth - 1):
        a, b = 1 << d, 1 << (d + 1)
        even = 2 * np.arange(a, b)
        parents_lo = lo[:, a:b]
        parents_hi = hi[:, a:b]
        lo[:, 2 * a : 2 * b : 2] = parents_lo
        lo[:, 2 * a + 1 : 2 * b : 2] = parents_lo
        hi[:, 2 * a : 2 * b : 2] = parents_hi
        hi[:, 2 * a + 1 : 2 * b : 2] = parents_hi
        ax = forest.axis[:, a:b]
        ct = forest.cutpoint[:, a:b]
        # left children keep cutpoints below the split, right children the rest
        hi[rows_col, even[None, :], ax] = ct - 1
        lo[rows_col, even[None, :] + 1, ax] = ct
    return lo, hi


def init_state(
    X: np.ndarray,
    max_cuts: np.ndarray,
    y: np.ndarray,
    hp: Hyperparams,
    rng: np.random.Generator,
    sigma2: float | None = None,
) -> SamplerState:
    """Fresh chain state: root-only zero forest, residuals equal to y."""
    X = np.asarray(X, np.uint8)
    y32 = np.asarray(y, np.float32)
    max_cuts = np.asarray(max_cuts, np.int64)
    n, p = X.shape
    if y32.shape != (n,):
        raise ValueError(f"y has shape {y32.shape}, expected ({n},)")
    if max_cuts.shape != (p,):
        raise ValueError(f"max_cuts has shape {max_cuts.shape}, expected ({p},)")
    forest = Forest.root_only(hp.n_trees, hp.max_depth, n_axes=p)
    size = heap_size(hp.max_depth)
    present = np.zeros((hp.n_trees, size), bool)
    present[:, 1] = True
    if sigma2 is None:
        sigma2 = float(np.var(y32, ddof=1)) if n >= 2 else 1.0
    lo, hi = availability_intervals(forest, max_cuts)
    can_split = np.zeros((hp.n_trees, size), bool)
    can_split[:, 1] = bool((max_cuts > 0).any())
    return SamplerState(
        X=X,
        max_cuts=max_cuts,
        y=y32,
        forest=forest,
        resid=y32.copy(),
        leaf_index=np.ones((n, hp.n_trees), np.uint8),
        sigma2=float(sigma2),
        rng=rng,
        node_present=present,
        node_leaf=present.copy(),
        avail_lo=lo,
        avail_hi=hi,
        node_can_split=can_split,
    )


@dataclass(frozen=True)
class StepRandoms:
    """All random numbers one step consumes, drawn as fixed-shape blocks."""

    move_u: np.ndarray    # (m, 5) uniforms: move coin, leaf, axis, cut, prune picks
    accept_u: np.ndarray  # (m,) uniforms
    leaf_z: np.ndarray    # (m, 2**D) standard normals
    chi2_value: float

    @classmethod
    def draw(cls, rng: np.random.Generator, n_trees: int, heap: int, chi2_df: float) -> "StepRandoms":
        return cls(
            move_u=rng.random((n_trees, 5)),
            accept_u=rng.random(n_trees),
            leaf_z=rng.standard_normal((n_trees, heap)),
            chi2_value=float(rng.chisquare(chi2_df)),
        )


@dataclass(frozen=True)
class MoveProposal:
    """One tree's proposed move and the counts its acceptance ratio needs."""

    tree: int
    kind: int           # KIND_NONE / KIND_GROW / KIND_PRUNE
    node: int           # leaf to grow, or decision node to prune; 0 when none
    axis: int
    cut: int
    depth: int
    n_axes: int         # axes with available splits at the node
    n_splits: int       # available cutpoints along the chosen axis
    w_small: int        # growable leaves of the smaller tree of the pair
    w_prime_big: int    # prunable nodes of the larger tree of the pair
    growable_big: int   # growable leaves of the larger tree of the pair
    left_child_growable: bool
    right_child_growable: bool


# rows of the packed integer output of the proposal kernel
_R_NODE, _R_AXIS, _R_CUT, _R_NAXES, _R_NSPLITS, _R_WSMALL, _R_WPRIMEBIG, _R_GROWBIG = range(8)


@dataclass
class Proposals:
    """Vectorized move proposals, one entry per tree (phase 1 output).

    `struct_log` carries the structural part of the grow-direction
    acceptance log-ratio, already computed during proposal bookkeeping.
    """

    kind: np.ndarray
    node: np.ndarray
    axis: np.ndarray
    cut: np.ndarray
    depth: np.ndarray
    n_axes: np.ndarray
    n_splits: np.ndarray
    w_small: np.ndarray
    w_prime_big: np.ndarray
    growable_big: np.ndarray
    left_child_growable: np.ndarray
    right_child_growable: np.ndarray
    struct_log: np.ndarray

    def tree(self, j: int) -> MoveProposal:
        return MoveProposal(
            tree=j,
            kind=int(self.kind[j]),
            node=int(self.node[j]),
            axis=int(self.axis[j]),
            cut=int(self.cut[j]),
            depth=int(self.depth[j]),
            n_axes=int(self.n_axes[j]),
            n_splits=int(self.n_splits[j]),
            w_small=int(self.w_small[j]),
            w_prime_big=int(self.w_prime_big[j]),
            growable_big=int(self.growable_big[j]),
            left_child_growable=bool(self.left_child_growable[j]),
            right_child_growable=bool(self.right_child_growable[j]),
        )


@njit(cache=True)
def _propose_kernel(cutpoint, tree_axis, node_leaf, can_split, avail_lo, avail_hi,
                    depths, depth_probs, p_grow, uniforms, kind, out_i, out_b, struct_out):
    """Per-tree proposal bookkeeping: fixed-bound scalar loops, no early exits.

    Fills `kind`, the packed integer rows of `out_i` (node, axis, cut,
    n_axes, n_splits, w_small, w_prime_big, growable_big), the child
    growability flags in `out_b`, and the structural log-ratio.
    """
    m, size = node_leaf.shape
    half = cutpoint.shape[1]
    p = avail_lo.shape[2]
    D = depth_probs.shape[0]
    grow_mask = np.zeros(size, np.bool_)
    prune_mask = np.zeros(half, np.bool_)
    for j in range(m):
        # candidate sets, ordered by heap index
        w = 0
        for t in range(1, size):
            g = node_leaf[j, t] and depths[t] < D - 1 and can_split[j, t]
            grow_mask[t] = g
            if g:
                w += 1
        wp = 0
        for t in range(1, half):
            it = cutpoint[j, t] > 0
            li = False
            ri = False
            if 2 * t < half:
                li = cutpoint[j, 2 * t] > 0
                ri = cutpoint[j, 2 * t + 1] > 0
            pr = it and not li and not ri
            prune_mask[t] = pr
            if pr:
                wp += 1

        if w == 0 and wp == 0:
            kind[j] = 0
            for r in range(8):
                out_i[r, j] = 0
            out_b[0, j] = False
            out_b[1, j] = False
            struct_out[j] = 0.0
            continue

        grow = w > 0 and (wp == 0 or uniforms[j, 0] < p_grow)
        kind[j] = 1 if grow else 2

        # target node: floor(u * count)-th candidate
        t_sel = 0
        if grow:
            k = int(uniforms[j, 1] * w)
            if k > w - 1:
                k = w - 1
            c = 0
            for t in range(1, size):
                if grow_mask[t]:
                    if c == k:
                        t_sel = t
                    c += 1
        else:
            k = int(uniforms[j, 4] * wp)
            if k > wp - 1:
                k = wp - 1
            c = 0
            for t in range(1, half):
                if prune_mask[t]:
                    if c == k:
                        t_sel = t
                    c += 1

        na = 0
        for a in range(p):
            if avail_hi[j, t_sel, a] > avail_lo[j, t_sel, a]:
                na += 1
        if grow:
            ka = int(uniforms[j, 2] * na)
            if ka > na - 1:
                ka = na - 1
            a_sel = 0
            c = 0
            for a in range(p):
                if avail_hi[j, t_sel, a] > avail_lo[j, t_sel, a]:
                    if c == ka:
                        a_sel = a
                    c += 1
        else:
            a_sel = int(tree_axis[j, t_sel])
        la = int(avail_lo[j, t_sel, a_sel])
        ha = int(avail_hi[j, t_sel, a_sel])
        ns = ha - la
        if grow:
            kc = int(uniforms[j, 3] * ns)
            if kc > ns - 1:
                kc = ns - 1
            c_sel = la + 1 + kc
        else:
            c_sel = int(cutpoint[j, t_sel])

        d = int(depths[t_sel])
        child_ok = d < D - 2
        if grow:
            has_other = na >= 2
            gl = child_ok and (has_other or c_sel - 1 > la)
            gr = child_ok and (has_other or ha > c_sel)
            w_small = w
            par_pr = t_sel > 1 and prune_mask[t_sel >> 1]
            w_prime_big = wp + 1 - (1 if par_pr else 0)
            growable_big = w - 1 + (1 if gl else 0) + (1 if gr else 0)
        else:
            gl = grow_mask[2 * t_sel]
            gr = grow_mask[2 * t_sel + 1]
            w_small = w - (1 if gl else 0) - (1 if gr else 0) + 1
            w_prime_big = wp
            growable_big = w

        out_i[_R_NODE, j] = t_sel
        out_i[_R_AXIS, j] = a_sel
        out_i[_R_CUT, j] = c_sel
        out_i[_R_NAXES, j] = na
        out_i[_R_NSPLITS, j] = ns
        out_i[_R_WSMALL, j] = w_small
        out_i[_R_WPRIMEBIG, j] = w_prime_big
        out_i[_R_GROWBIG, j] = growable_big
        out_b[0, j] = gl
        out_b[1, j] = gr

        # structural log-ratio, grow direction (same form as
        # _structural_log_ratio, on scalars)
        dp = depth_probs[d]
        cp = depth_probs[d + 1] if d + 1 < D else depth_probs[D - 1]
        p_prune_eff = 1.0 if growable_big == 0 else 1.0 - p_grow
        p_grow_eff = 1.0 if t_sel == 1 else p_grow
        ws = w_small if w_small > 1 else 1
        wpb = w_prime_big if w_prime_big > 1 else 1
        core = dp * p_prune_eff * ws / ((1.0 - dp) * p_grow_eff * wpb)
        struct_out[j] = (
            math.log(core)
            + math.log1p(-cp * (1.0 if gl else 0.0))
            + math.log1p(-cp * (1.0 if gr else 0.0))
        )


def propose_moves(
    state: SamplerState,
    hp: Hyperparams,
    rng: np.random.Generator | None = None,
    uniforms: np.ndarray | None = None,
) -> Proposals:
    """Draw one independent move proposal per tree (phase 1).

    Move kind is GROW with probability ``p_grow`` when both moves are
    possible; a root-only tree forces GROW, a tree with no growable leaf
    forces PRUNE, and a tree with neither yields a null proposal.  The GROW
    target is uniform over growable leaves, its axis uniform over axes with
    available splits, its cutpoint uniform over the splits available there;
    the PRUNE target is uniform over decision nodes with two leaf children.

    `uniforms` is the (m, 5) block [move coin, leaf pick, axis pick, cut
    pick, prune pick]; it is drawn from `rng` when not supplied.
    """
    forest = state.forest
    m = forest.n_trees
    if uniforms is None:
        uniforms = (rng if rng is not None else state.rng).random((m, 5))
    kind = np.empty(m, np.int8)
    out_i = np.empty((8, m), np.int64)
    out_b = np.empty((2, m), np.bool_)
    struct = np.empty(m, np.float64)
    _propose_kernel(
        forest.cutpoint,
        forest.axis,
        state.node_leaf,
        state.node_can_split,
        state.avail_lo,
        state.avail_hi,
        state._depths,
        _depth_probs(hp.alpha, hp.beta, hp.max_depth),
        hp.p_grow,
        uniforms,
        kind,
        out_i,
        out_b,
        struct,
    )
    opcount.tally("propose.bookkeeping", m * (heap_size(forest.max_depth) + state.X.shape[1]))
    return Proposals(
        kind=kind,
        node=out_i[_R_NODE],
        axis=out_i[_R_AXIS],
        cut=out_i[_R_CUT],
        depth=state._depths[out_i[_R_NODE]],
        n_axes=out_i[_R_NAXES],
        n_splits=out_i[_R_NSPLITS],
        w_small=out_i[_R_WSMALL],
        w_prime_big=out_i[_R_WPRIMEBIG],
        growable_big=out_i[_R_GROWBIG],
        left_child_growable=out_b[0],
        right_child_growable=out_b[1],
        struct_log=struct,
    )


def refresh_leaf_indices(state: SamplerState, proposals: Proposals) -> None:
    """Point the index cache at the larger tree of each move (phase 2).

    For a GROW proposal the points in the grown leaf move to one of its new
    children; for PRUNE and null proposals the cache already holds the
    larger (current) tree.  The same amount of work runs for every tree.
    """
    X = state.X
    L = state.leaf_index
    for j in range(state.forest.n_trees):
        t = int(proposals.node[j])
        col = L[:, j]
        grown = np.where(
            col == t,
            (2 * t + (X[:, int(proposals.axis[j])] >= proposals.cut[j])).astype(np.uint8),
            col,
        )
        L[:, j] = grown if proposals.kind[j] == KIND_GROW else col
    opcount.tally("cache.grow_update", X.shape[0] * state.forest.n_trees * 3)


def count_points_per_leaf(leaf_idx: np.ndarray, heap: int) -> np.ndarray:
    """Points per heap node (phase 3): an indexed count over one tree's column."""
    opcount.tally("leaf.counts", leaf_idx.size)
    return np.bincount(leaf_idx, minlength=heap)


def sum_residuals_per_leaf(
    resid: np.ndarray,
    leaf_idx: np.ndarray,
    counts: np.ndarray,
    old_leaf: np.ndarray,
    node: int,
    is_grow: bool,
) -> np.ndarray:
    """Residual sums per heap node with the current tree's effect removed.

    Indexed float64 sums of `resid` over `leaf_idx` (phase 7), plus, per
    node, count times the tree's current prediction there (phase 8).
    Freshly grown children inherit the prediction of the leaf they split.
    """
    raw = np.bincount(leaf_idx, weights=resid, minlength=counts.size)
    adj = old_leaf.astype(np.float64)
    c2, c3 = 2 * node, 2 * node + 1
    adj[c2] = old_leaf[node if is_grow else c2]
    adj[c3] = old_leaf[node if is_grow else c3]
    opcount.tally("leaf.sums", leaf_idx.size + counts.size)
    return raw + counts * adj


def leaf_posterior(count, rsum, sigma2, hp: Hyperparams):
    """Conditional posterior (mean, precision) of leaf values.

    Conjugate normal update: ``precision = 1/leaf_sd**2 + count/sigma2`` and
    the mean is the precision-weighted blend of the prior mean with the
    residual sum.  Array-generic.
    """
    tau = 1.0 / sigma2
    tau_mu = 1.0 / (hp.leaf_sd * hp.leaf_sd)
    prec = tau_mu + count * tau
    mean = (tau_mu * hp.leaf_mean + tau * rsum) / prec
    return mean, prec


def draw_leaf_values(mean, prec, z):
    """Map standard-normal draws to Normal(mean, 1/prec)."""
    return mean + z / np.sqrt(prec)


def _marginal_count_term(count, sigma2, hp: Hyperparams):
    tau = 1.0 / sigma2
    tau_mu = 1.0 / (hp.leaf_sd * hp.leaf_sd)
    prec = tau_mu + count * tau
    return 0.5 * np.log(tau_mu / prec) - 0.5 * hp.leaf_mean * hp.leaf_mean * tau_mu


def _marginal_sum_term(count, rsum, sigma2, hp: Hyperparams):
    mean, prec = leaf_posterior(count, rsum, sigma2, hp)
    return 0.5 * mean * mean * prec


def log_marginal_leaf(count, rsum, sigma, hp: Hyperparams):
    """Log marginal likelihood of a leaf's residuals, up to cancelling terms.

    The leaf value is integrated out of the Gaussian likelihood under its
    Normal(leaf_mean, leaf_sd**2) prior.  The Gaussian normalisers and the
    quadratic-residual term are omitted: they depend only on the point count
    and the summed squared residuals, which match between the two sides of a
    grow/prune ratio because the children partition the parent's points.
    An empty leaf contributes exactly 0.
    """
    sigma2 = sigma * sigma
    return _marginal_count_term(count, sigma2, hp) + _marginal_sum_term(count, rsum, sigma2, hp)


def _likelihood_count_part(n_left, n_right, sigma2, hp: Hyperparams):
    """Count-only part of the children-vs-parent marginal ratio (phase 4/6)."""
    tau = 1.0 / sigma2
    tau_mu = 1.0 / (hp.leaf_sd * hp.leaf_sd)
    prec_l = tau_mu + n_left * tau
    prec_r = tau_mu + n_right * tau
    prec_p = tau_mu + (n_left + n_right) * tau
    return 0.5 * np.log(tau_mu * prec_p / (prec_l * prec_r)) - 0.5 * hp.leaf_mean * hp.leaf_mean * tau_mu


def _likelihood_sum_part(n_left, n_right, s_left, s_right, sigma2, hp: Hyperparams):
    """Posterior-mean part of the children-vs-parent marginal ratio (phase 9)."""
    tau = 1.0 / sigma2
    tau_mu = 1.0 / (hp.leaf_sd * hp.leaf_sd)
    shift = tau_mu * hp.leaf_mean

    def term(count, rsum):
        prec = tau_mu + count * tau
        mean = (shift + tau * rsum) / prec
        return mean * mean * prec

    return 0.5 * (term(n_left, s_left) + term(n_right, s_right) - term(n_left + n_right, s_left + s_right))


def _structural_log_ratio(depth_prob, child_prob, g_left, g_right, w_small, w_prime_big, growable_big, small_is_root, p_grow):
    """Log of (tree-prior ratio x proposal ratio) for growing the target node.

    The uniform axis/cutpoint choice appears identically in the prior and in
    the proposal, so those factors cancel and only the depth profile, the
    children's leaf factors (dropped when a child could not grow anyway),
    the candidate counts, and the effective move probabilities remain.
    Array-generic; the prune ratio is the negation.  Candidate counts are
    clamped to 1 so null proposals stay finite; callers mask them out.
    """
    p_prune_eff = np.where(growable_big == 0, 1.0, 1.0 - p_grow)
    p_grow_eff = np.where(small_is_root, 1.0, p_grow)
    core = (
        depth_prob
        * p_prune_eff
        * np.maximum(w_small, 1)
        / ((1.0 - depth_prob) * p_grow_eff * np.maximum(w_prime_big, 1))
    )
    return np.log(core) + np.log1p(-child_prob * g_left) + np.log1p(-child_prob * g_right)


@njit(cache=True)
def _partial_kernel(counts, node, struct_log, kind, sigma2, leaf_sd, leaf_mean, partial, sign, valid):
    tau = 1.0 / sigma2
    tau_mu = 1.0 / (leaf_sd * leaf_sd)
    m = node.shape[0]
    for j in range(m):
        t = node[j]
        n_left = counts[j, 2 * t]
        n_right = counts[j, 2 * t + 1]
        prec_l = tau_mu + n_left * tau
        prec_r = tau_mu + n_right * tau
        prec_p = tau_mu + (n_left + n_right) * tau
        count_part = 0.5 * math.log(tau_mu * prec_p / (prec_l * prec_r)) - 0.5 * leaf_mean * leaf_mean * tau_mu
        partial[j] = struct_log[j] + count_part
        sign[j] = 1.0 if kind[j] == KIND_GROW else -1.0
        valid[j] = kind[j] != KIND_NONE


def _parallel_accept_terms(props: Proposals, counts: np.ndarray, sigma2: float, hp: Hyperparams):
    """Every acceptance-ratio term free of residual sums (phases 4 and 6).

    Returns (partial, sign, valid): the grow-direction log-ratio missing
    only the posterior-mean terms, the per-tree sign (+1 grow, -1 prune),
    and a validity mask that is False for null proposals.
    """
    m = props.kind.size
    partial = np.empty(m, np.float64)
    sign = np.empty(m, np.float64)
    valid = np.empty(m, np.bool_)
    _partial_kernel(
        counts, props.node, props.struct_log, props.kind,
        sigma2, hp.leaf_sd, hp.leaf_mean, partial, sign, valid,
    )
    opcount.tally("accept.parallel", m)
    return partial, sign, valid


def accept_probability(proposal: MoveProposal, counts: np.ndarray, sums: np.ndarray, sigma: float, hp: Hyperparams) -> float:
    """Metropolis acceptance probability of one proposal, in [0, 1].

    `counts` and `sums` index the larger tree of the move pair by heap
    position; `sums` must already have the current tree's effect removed
    (see `sum_residuals_per_leaf`).  Null proposals return 0.
    """
    if proposal.kind == KIND_NONE:
        return 0.0
    sigma2 = sigma * sigma
    c2, c3 = 2 * proposal.node, 2 * proposal.node + 1
    n_left, n_right = int(counts[c2]), int(counts[c3])
    lik = _likelihood_count_part(n_left, n_right, sigma2, hp) + _likelihood_sum_part(
        n_left, n_right, float(sums[c2]), float(sums[c3]), sigma2, hp
    )
    probs = _depth_probs(hp.alpha, hp.beta, hp.max_depth)
    struct = _structural_log_ratio(
        probs[proposal.depth],
        probs[min(proposal.depth + 1, hp.max_depth - 1)],
        proposal.left_child_growable,
        proposal.right_child_growable,
        proposal.w_small,
        proposal.w_prime_big,
        proposal.growable_big,
        proposal.node == 1,
        hp.p_grow,
    )
    total = (1.0 if proposal.kind == KIND_GROW else -1.0) * (float(struct) + float(lik))
    return 1.0 if total >= 0 else math.exp(total)


def update_caches(
    state: SamplerState,
    j: int,
    node: int,
    old_is_small: bool,
    final_is_small: bool,
    old_leaf: np.ndarray,
    new_leaf: np.ndarray,
) -> None:
    """Restore cache coherence for tree j after its move is resolved.

    The index column currently holds the larger tree of the move pair.  The
    smaller tree's indices follow by halving the moved children back into
    their parent.  Residuals gain, per point, the old prediction minus the
    new one, in float32.  Identical old and new trees leave both caches
    bitwise unchanged.
    """
    Lj = state.leaf_index[:, j]
    collapsed = np.where((Lj >> 1) == node, np.uint8(node), Lj)
    final = collapsed if final_is_small else Lj
    old_idx = collapsed if old_is_small else Lj
    delta = old_leaf[old_idx] - new_leaf[final]
    state.leaf_index[:, j] = final
    state.resid += delta
    opcount.tally("cache.resolve", Lj.size * 4)


def sample_leaves(
    tree: TreeHeap,
    counts: np.ndarray,
    sums: np.ndarray,
    sigma: float,
    hp: Hyperparams,
    rng: np.random.Generator | None = None,
    z: np.ndarray | None = None,
) -> np.ndarray:
    """Redraw every leaf value of `tree` from its conditional posterior.

    `counts`/`sums` are per-heap-node point counts and tree-excluded
    residual sums for this tree's structure.  Empty leaves draw from the
    prior.  Returns a fresh float32 leaf row with non-leaf entries zeroed.
    """
    from bforge.trees import leaf_mask

    size = heap_size(tree.max_depth)
    if z is None:
        z = rng.standard_normal(size)
    mask = leaf_mask(tree.cutpoint[None, :], tree.max_depth)[0]
    mean, prec = leaf_posterior(counts, sums, sigma * sigma, hp)
    values = draw_leaf_values(mean, prec, z)
    return (values * mask).astype(np.float32)


def sum_squares(x: np.ndarray) -> float:
    """Float64 sum of squares with a fixed, deterministic reduction order."""
    x64 = np.asarray(x, np.float64)
    opcount.tally("sigma.rss", x64.size)
    return float(np.add.reduce(np.square(x64)))


def sigma2_draw(resid: np.ndarray, hp: Hyperparams, chi2_value: float) -> float:
    """Error-variance draw: (nu*lam + sum of squared residuals) / chi2."""
    return (hp.nu * hp.lam + sum_squares(resid)) / chi2_value


def sample_sigma(resid: np.ndarray, hp: Hyperparams, rng: np.random.Generator, chi2_value: float | None = None) -> float:
    """Draw the error standard deviation given the full-forest residuals."""
    if chi2_value is None:
        chi2_value = float(rng.chisquare(hp.nu + resid.size))
    return math.sqrt(sigma2_draw(resid, hp, chi2_value))


def _resolve_tree(
    state: SamplerState,
    hp: Hyperparams,
    props: Proposals,
    counts: np.ndarray,
    partial_j: float,
    sign_j: float,
    valid_j: bool,
    rnd: StepRandoms,
    j: int,
) -> bool:
    """Phases 7-11 for tree j: finish the ratio, resolve, redraw, update."""
    forest = state.forest
    t = int(props.node[j])
    is_grow = props.kind[j] == KIND_GROW
    c2, c3 = 2 * t, 2 * t + 1
    old_leaf = forest.leaf_value[j].copy()
    cnt = counts[j]

    sums = sum_residuals_per_leaf(state.resid, state.leaf_index[:, j], cnt, old_leaf, t, is_grow)

    n_left = int(cnt[c2])
    n_right = int(cnt[c3])
    sum_part = _likelihood_sum_part(n_left, n_right, float(sums[c2]), float(sums[c3]), state.sigma2, hp)
    log_alpha = sign_j * (partial_j + sum_part) if valid_j else -math.inf
    accepted = bool(rnd.accept_u[j] < math.exp(min(log_alpha, 0.0)))

    if accepted:
        if is_grow:
            forest.axis[j, t] = props.axis[j]
            forest.cutpoint[j, t] = props.cut[j]
            state.node_present[j, c2] = state.node_present[j, c3] = True
            state.node_leaf[j, t] = False
            state.node_leaf[j, c2] = state.node_leaf[j, c3] = True
        else:
            forest.axis[j, t] = 0
            forest.cutpoint[j, t] = 0
            state.node_present[j, c2] = state.node_present[j, c3] = False
            state.node_leaf[j, c2] = state.node_leaf[j, c3] = False
            state.node_leaf[j, t] = True

    if t:
        # refresh the children's availability slots from the proposal's split
        # (also writes harmless junk at children that are not present)
        a_prop = int(props.axis[j])
        state.avail_lo[j, c2 : c3 + 1] = state.avail_lo[j, t]
        state.avail_hi[j, c2 : c3 + 1] = state.avail_hi[j, t]
        state.avail_hi[j, c2, a_prop] = props.cut[j] - 1
        state.avail_lo[j, c3, a_prop] = props.cut[j]
        open_pair = state.avail_hi[j, c2 : c3 + 1] > state.avail_lo[j, c2 : c3 + 1]
        state.node_can_split[j, c2 : c3 + 1] = open_pair.any(axis=1)

    final_is_small = (accepted != is_grow) and valid_j
    if final_is_small:
        cnt[t] = cnt[c2] + cnt[c3]
        cnt[c2] = cnt[c3] = 0
        sums[t] = sums[c2] + sums[c3]
        sums[c2] = sums[c3] = 0.0

    mean, prec = leaf_posterior(cnt, sums, state.sigma2, hp)
    values = draw_leaf_values(mean, prec, rnd.leaf_z[j])
    new_leaf = (values * state.node_leaf[j]).astype(np.float32)
    opcount.tally("leaf.draw", counts.shape[1])

    update_caches(state, j, t, is_grow, final_is_small, old_leaf, new_leaf)
    forest.leaf_value[j] = new_leaf
    return accepted


def step(state: SamplerState, hp: Hyperparams, rng: np.random.Generator | None = None) -> SamplerState:
    """One full sampler iteration; mutates and returns `state`.

    Tree-parallel phases 1-6 run before the sequential sweep (phases 7-11,
    per tree in index order: each tree's residual update feeds the next
    tree's sums), then the error variance is redrawn from the summed
    squared residuals.
    """
    if rng is None:
        rng = state.rng
    forest = state.forest
    m = forest.n_trees
    size = heap_size(forest.max_depth)
    rnd = StepRandoms.draw(rng, m, size, hp.nu + state.n_points)

    props = propose_moves(state, hp, uniforms=rnd.move_u)
    refresh_leaf_indices(state, props)
    counts = np.empty((m, size), np.int64)
    for j in range(m):
        counts[j] = count_points_per_leaf(state.leaf_index[:, j], size)
    partial, sign, valid = _parallel_accept_terms(props, counts, state.sigma2, hp)

    accepted = np.empty(m, bool)
    for j in range(m):
        accepted[j] = _resolve_tree(
            state, hp, props, counts, float(partial[j]), float(sign[j]), bool(valid[j]), rnd, j
        )

    sigma2_new = sigma2_draw(state.resid, hp, rnd.chi2_value)
    if hp.update_sigma:
        state.sigma2 = sigma2_new
    state.last_accepted = accepted
    state.last_proposals = props
    state.iteration += 1
    return state


def sample_prior_tree(max_cuts: np.ndarray, hp: Hyperparams, rng: np.random.Generator) -> TreeHeap:
    """Draw one tree from the generative prior.

    Starting at the root, a node with available splits becomes a decision
    node with the depth probability, picking its axis uniformly among axes
    with available splits and its cutpoint uniformly among the splits
    available there; nodes without available splits, and all nodes at the
    deepest level, are leaves.  Leaf values are independent
    Normal(leaf_mean, leaf_sd**2).
    """
    max_cuts = np.asarray(max_cuts, np.int64)
    p = max_cuts.size
    tree = TreeHeap.root_only(hp.max_depth, n_axes=p)
    probs = _depth_probs(hp.alpha, hp.beta, hp.max_depth)
    lo = np.zeros(p, np.int64)
    hi = max_cuts.copy()

    def build(t: int, depth: int) -> None:
        open_axes = np.flatnonzero(hi > lo)
        if open_axes.size and rng.random() < probs[depth]:
            a = int(open_axes[min(int(rng.random() * open_axes.size), open_axes.size - 1)])
            span = int(hi[a] - lo[a])
            c = int(lo[a]) + 1 + min(int(rng.random() * span), span - 1)
            tree.axis[t] = a
            tree.cutpoint[t] = c
            kept = hi[a]
            hi[a] = c - 1
            build(2 * t, depth + 1)
            hi[a] = kept
            kept = lo[a]
            lo[a] = c
            build(2 * t + 1, depth + 1)
            lo[a] = kept
        else:
            tree.leaf_value[t] = rng.normal(hp.leaf_mean, hp.leaf_sd)

    build(1, 0)
    return tree
