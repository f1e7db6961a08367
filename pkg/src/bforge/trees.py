"""Fixed-depth decision trees stored as implicit binary heaps.

A tree of maximum depth ``D`` (``D = 1`` meaning a root-only tree) lives in
three flat arrays indexed by heap position: the root is at index 1, node
``t`` has children ``2*t`` and ``2*t + 1``, and index 0 is unused.  Nodes at
the deepest level can only be leaves, so the axis and cutpoint arrays cover
only the first ``2**(D-1)`` positions, while the leaf-value array covers the
full ``2**D``.

``cutpoint[t] == 0`` marks node ``t`` as a leaf; real cutpoints are 1-based
indices into a cutpoint grid.  Decision rules send a point right when its
grid index is >= the cutpoint.  Array entries that do not belong to the tree
(missing nodes, the axis/cutpoint of a leaf, the value of a decision node)
are kept at 0, so equal trees are bitwise equal.

Serialized with 32-bit entries, one tree occupies ``2**(D+3)`` bytes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bforge import opcount

#: Deepest tree supported; leaf heap indices must fit in one byte.
MAX_SUPPORTED_DEPTH = 8


def heap_size(max_depth: int) -> int:
    """Length of the leaf-value array for a tree of depth `max_depth`."""
    return 1 << max_depth


def split_slots(max_depth: int) -> int:
    """Length of the axis and cutpoint arrays (first half of the heap)."""
    return 1 << (max_depth - 1)


def node_depth(index: int) -> int:
    """Depth of heap node `index` (0 at the root)."""
    return int(index).bit_length() - 1


def depth_table(max_depth: int) -> np.ndarray:
    """Per-heap-index depth, with the unused index 0 mapped to 0."""
    idx = np.arange(heap_size(max_depth))
    idx[0] = 1
    return np.log2(idx).astype(np.int64)


def min_axis_dtype(n_axes: int) -> np.dtype:
    """Narrowest unsigned integer dtype that can hold axis index n_axes - 1."""
    return np.min_scalar_type(max(int(n_axes) - 1, 0))


def serialized_tree_nbytes(max_depth: int) -> int:
    """Bytes for one tree in the 32-bit serialized form: 2**(D+3)."""
    return 4 * (2 * split_slots(max_depth) + heap_size(max_depth))


def _check_depth(max_depth: int) -> None:
    if not 1 <= max_depth <= MAX_SUPPORTED_DEPTH:
        raise ValueError(
            f"max_depth must be in [1, {MAX_SUPPORTED_DEPTH}], got {max_depth}"
        )


@dataclass
class TreeHeap:
    """One decision tree in heap layout.

    Attributes
    ----------
    axis : ndarray
        Shape ``(2**(D-1),)``, unsigned; splitting axis of each decision node.
    cutpoint : ndarray
        Shape ``(2**(D-1),)``, uint8; 1-based grid index of the split, 0 for
        leaves and missing nodes.
    leaf_value : ndarray
        Shape ``(2**D,)``, float32; function value of each leaf node.
    max_depth : int
        D >= 1; a root-only tree has D = 1.
    """

    axis: np.ndarray
    cutpoint: np.ndarray
    leaf_value: np.ndarray
    max_depth: int

    @classmethod
    def root_only(cls, max_depth: int, n_axes: int = 1, value: float = 0.0) -> "TreeHeap":
        """A single-leaf tree with the given root value."""
        _check_depth(max_depth)
        tree = cls(
            axis=np.zeros(split_slots(max_depth), min_axis_dtype(n_axes)),
            cutpoint=np.zeros(split_slots(max_depth), np.uint8),
            leaf_value=np.zeros(heap_size(max_depth), np.float32),
            max_depth=max_depth,
        )
        tree.leaf_value[1] = value
        return tree

    def copy(self) -> "TreeHeap":
        return TreeHeap(self.axis.copy(), self.cutpoint.copy(), self.leaf_value.copy(), self.max_depth)


@dataclass
class Forest:
    """A stack of trees sharing one heap layout, one row per tree.

    Attributes
    ----------
    axis : ndarray
        Shape ``(m, 2**(D-1))``, unsigned.
    cutpoint : ndarray
        Shape ``(m, 2**(D-1))``, uint8.
    leaf_value : ndarray
        Shape ``(m, 2**D)``, float32.
    max_depth : int
    """

    axis: np.ndarray
    cutpoint: np.ndarray
    leaf_value: np.ndarray
    max_depth: int

    @property
    def n_trees(self) -> int:
        return self.axis.shape[0]

    @classmethod
    def root_only(cls, n_trees: int, max_depth: int, n_axes: int = 1) -> "Forest":
        """A forest of `n_trees` single-leaf trees with zero values."""
        _check_depth(max_depth)
        if n_trees < 1:
            raise ValueError(f"n_trees must be >= 1, got {n_trees}")
        return cls(
            axis=np.zeros((n_trees, split_slots(max_depth)), min_axis_dtype(n_axes)),
            cutpoint=np.zeros((n_trees, split_slots(max_depth)), np.uint8),
            leaf_value=np.zeros((n_trees, heap_size(max_depth)), np.float32),
            max_depth=max_depth,
        )

    def tree(self, j: int) -> TreeHeap:
        """View of tree `j` (shares storage with the forest)."""
        return TreeHeap(self.axis[j], self.cutpoint[j], self.leaf_value[j], self.max_depth)

    def copy(self) -> "Forest":
        return Forest(self.axis.copy(), self.cutpoint.copy(), self.leaf_value.copy(), self.max_depth)


def traverse(tree: TreeHeap, x: np.ndarray) -> int:
    """Heap index of the leaf whose region contains the grid-index row `x`.

    Runs exactly ``max_depth - 1`` loop iterations with the same operation
    sequence regardless of the input; once a leaf is reached the index is
    carried unchanged through the remaining iterations.
    """
    axis = tree.axis
    cutpoint = tree.cutpoint
    index = 1
    leaf_found = False
    for _ in range(tree.max_depth - 1):
        a = int(axis[index])
        split = int(cutpoint[index])
        leaf_found = leaf_found or (split == 0)
        child = 2 * index + (1 if int(x[a]) >= split else 0)
        index = index if leaf_found else child
    return index


def traverse_forest(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Leaf heap indices for every (point, tree) pair.

    Parameters
    ----------
    forest : Forest
    X : ndarray
        Shape ``(n, p)`` matrix of uint8 grid indices.

    Returns
    -------
    ndarray
        Shape ``(n, m)`` uint8; entry (i, j) is the leaf of tree j that
        contains row i.
    """
    _check_depth(forest.max_depth)
    n = X.shape[0]
    m = forest.n_trees
    rows = np.arange(n)[:, None]
    cols = np.arange(m)[None, :]
    index = np.ones((n, m), np.int32)
    found = np.zeros((n, m), bool)
    for _ in range(forest.max_depth - 1):
        a = forest.axis[cols, index]
        split = forest.cutpoint[cols, index]
        found |= split == 0
        child = 2 * index + (X[rows, a] >= split)
        index = np.where(found, index, child)
        opcount.tally("traverse.level", n * m)
    return index.astype(np.uint8)


def sum_leaf_values(leaf_value: np.ndarray, leaf_index: np.ndarray) -> np.ndarray:
    """Sum of per-tree leaf values selected by `leaf_index`, in tree order.

    `leaf_value` is the ``(m, 2**D)`` float32 matrix; `leaf_index` the
    ``(n, m)`` uint8 index matrix.  Accumulates in float64, tree by tree, so
    the result is identical whether the indices come from a cache or from a
    fresh traversal.
    """
    total = np.zeros(leaf_index.shape[0], np.float64)
    for j in range(leaf_value.shape[0]):
        total += leaf_value[j, leaf_index[:, j]]
    opcount.tally("evaluate.gather", leaf_index.size)
    return total


def evaluate_forest(forest: Forest, X: np.ndarray) -> np.ndarray:
    """Sum-of-trees function values for the rows of `X` (float64)."""
    return sum_leaf_values(forest.leaf_value, traverse_forest(forest, X))


def present_mask(cutpoint: np.ndarray, max_depth: int) -> np.ndarray:
    """Which heap nodes exist, per tree.

    `cutpoint` is the ``(m, 2**(D-1))`` matrix; returns ``(m, 2**D)`` bool.
    The root always exists; any other node exists iff its parent is a
    decision node.
    """
    m = cutpoint.shape[0]
    size = heap_size(max_depth)
    present = np.zeros((m, size), bool)
    present[:, 1] = True
    internal = cutpoint > 0
    for d in range(max_depth - 1):
        lo, hi = 1 << d, 1 << (d + 1)
        alive = present[:, lo:hi] & internal[:, lo:hi]
        present[:, 2 * lo : 2 * hi] = np.repeat(alive, 2, axis=1)
    return present


def leaf_mask(cutpoint: np.ndarray, max_depth: int) -> np.ndarray:
    """Which heap nodes are leaves, per tree: present and not decision nodes."""
    present = present_mask(cutpoint, max_depth)
    internal = np.zeros_like(present)
    internal[:, : cutpoint.shape[1]] = cutpoint > 0
    return present & ~internal


def validate(tree: TreeHeap, n_axes: int | None = None, grid_counts: np.ndarray | None = None) -> str | None:
    """Check the heap-layout invariants of one tree.

    Returns None when the tree is valid, otherwise a short description of
    the first violated invariant.  `n_axes` enables the axis-range check;
    `grid_counts` (cutpoints per axis) enables the cutpoint-range check.
    """
    D = tree.max_depth
    if not isinstance(D, int) or D < 1:
        return f"max_depth must be a positive integer, got {D!r}"
    half, full = split_slots(D), heap_size(D)
    if tree.axis.shape != (half,):
        return f"axis array has shape {tree.axis.shape}, expected ({half},)"
    if tree.cutpoint.shape != (half,):
        return f"cutpoint array has shape {tree.cutpoint.shape}, expected ({half},)"
    if tree.leaf_value.shape != (full,):
        return f"leaf_value array has shape {tree.leaf_value.shape}, expected ({full},)"

    cut = tree.cutpoint[None, :]
    present = present_mask(cut, D)[0]
    internal = np.zeros(full, bool)
    internal[:half] = tree.cutpoint > 0
    leaves = present & ~internal

    orphans = np.flatnonzero(internal & ~present)
    if orphans.size:
        return f"orphan internal node at index {orphans[0]}"
    if internal[0] or tree.axis[0] != 0 or tree.leaf_value[0] != 0:
        return "index 0 must be unused (zero entries)"
    bad_axis = np.flatnonzero(~internal[:half] & (tree.axis != 0))
    if bad_axis.size:
        return f"non-decision node {bad_axis[0]} has a nonzero axis entry"
    bad_value = np.flatnonzero(~leaves & (tree.leaf_value != 0))
    if bad_value.size:
        return f"non-leaf node {bad_value[0]} has a nonzero leaf value"
    if n_axes is not None:
        high = np.flatnonzero(internal[:half] & (tree.axis >= n_axes))
        if high.size:
            return f"decision node {high[0]} splits on axis {tree.axis[high[0]]} >= {n_axes}"
    if grid_counts is not None:
        where_internal = np.flatnonzero(internal[:half])
        counts = np.asarray(grid_counts)[tree.axis[where_internal]]
        over = tree.cutpoint[where_internal] > counts
        if over.any():
            t = where_internal[np.flatnonzero(over)[0]]
            return f"decision node {t} uses cutpoint {tree.cutpoint[t]} beyond its axis grid"
    return None
