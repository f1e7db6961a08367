"""Cache-free reference chain for checking the fast sampler draw for draw.

No traverse-index cache, no availability cache, no phase structure: every
tree step re-derives candidate moves by walking the tree, re-assigns points
by recursive descent, and accumulates counts and sums with explicit loops.
The acceptance ratio is assembled from first principles with the exact leaf
marginals (normalising constants and quadratic terms included, so the
cancellations the fast path relies on are exercised rather than assumed).

Shared with the fast sampler, deliberately: the fixed random-number block
(`StepRandoms`), the scalar conjugate-posterior helpers (`leaf_posterior`,
`draw_leaf_values`), and the squared-residual reduction — the pieces whose
bit-for-bit agreement the equivalence test is defined over.  The residual
vector is maintained with the same per-tree float32 "old minus new" update,
which is part of the algorithm's semantics, but the predictions entering it
come from fresh recursive descents here.

Derived quantities follow the same stated conventions: candidate lists are
ordered by heap/axis index, a pick among k candidates is floor(u * k), and
counts/sums for the smaller tree of a move pair come from summing the
sibling pair of the larger tree.
"""

from __future__ import annotations

import math

import numpy as np

from bforge import sampler as S
from bforge.trees import heap_size, min_axis_dtype, node_depth, split_slots

from oracles import descend_arrays, full_leaf_log_marginal, region_bounds


class NaiveSampler:
    def __init__(self, X, max_cuts, y, hp, rng, sigma2):
        self.X = np.asarray(X, np.uint8)
        self.max_cuts = np.asarray(max_cuts, np.int64)
        self.y = np.asarray(y, np.float32)
        self.hp = hp
        self.rng = rng
        self.sigma2 = float(sigma2)
        n, p = self.X.shape
        half = split_slots(hp.max_depth)
        self.axis = np.zeros((hp.n_trees, half), min_axis_dtype(p))
        self.cutpoint = np.zeros((hp.n_trees, half), np.uint8)
        self.leaf_value = np.zeros((hp.n_trees, heap_size(hp.max_depth)), np.float32)
        self.resid = self.y.copy()
        self.last_accepted = np.zeros(hp.n_trees, bool)

    # structure queries, all by walking the arrays

    def _exists(self, j, t):
        while t > 1:
            parent = t >> 1
            if parent >= self.cutpoint.shape[1] or self.cutpoint[j, parent] == 0:
                return False
            t = parent
        return True

    def _is_leaf(self, j, t):
        return self._exists(j, t) and (t >= self.cutpoint.shape[1] or self.cutpoint[j, t] == 0)

    def _avail(self, j, t):
        lo, hi = region_bounds(self.axis[j], self.cutpoint[j], t, self.max_cuts)
        return hi - lo

    def _growable(self, j):
        out = []
        for t in range(1, heap_size(self.hp.max_depth)):
            if (
                self._is_leaf(j, t)
                and node_depth(t) < self.hp.max_depth - 1
                and (self._avail(j, t) > 0).any()
            ):
                out.append(t)
        return out

    def _prunable(self, j):
        out = []
        half = self.cutpoint.shape[1]
        for t in range(1, half):
            if self.cutpoint[j, t] > 0:
                left_internal = 2 * t < half and self.cutpoint[j, 2 * t] > 0
                right_internal = 2 * t + 1 < half and self.cutpoint[j, 2 * t + 1] > 0
                if not left_internal and not right_internal:
                    out.append(t)
        return out

    @staticmethod
    def _pick(candidates, u):
        k = min(int(u * len(candidates)), len(candidates) - 1)
        return candidates[k]

    def _assign(self, axis_row, cut_row):
        """Leaf of every point under the given structure, by recursion."""
        return np.array(
            [descend_arrays(axis_row, cut_row, self.hp.max_depth, self.X[i]) for i in range(self.X.shape[0])],
            np.int64,
        )

    def _structure_log_ratio(self, j, grown_axis, grown_cut, t):
        """Grow-direction log of prior ratio x proposal ratio, re-derived.

        `grown_axis`/`grown_cut` describe the larger tree; the smaller tree
        is the same structure with node `t` collapsed to a leaf.
        """
        hp = self.hp
        probs = S.depth_probabilities(hp)
        d = node_depth(t)
        # children's leaf factors in the larger tree
        terms = math.log(probs[d]) - math.log1p(-probs[d])
        for child in (2 * t, 2 * t + 1):
            cd = node_depth(child)
            child_can_grow = cd < hp.max_depth - 1 and (
                region_bounds(grown_axis, grown_cut, child, self.max_cuts)[1]
                > region_bounds(grown_axis, grown_cut, child, self.max_cuts)[0]
            ).any()
            if child_can_grow:
                terms += math.log1p(-probs[cd])
        # candidate counts on each side
        small_axis = grown_axis.copy()
        small_cut = grown_cut.copy()
        small_axis[t] = 0
        small_cut[t] = 0
        saved_axis, saved_cut = self.axis[j].copy(), self.cutpoint[j].copy()
        try:
            self.axis[j], self.cutpoint[j] = small_axis, small_cut
            w_small = len(self._growable(j))
            small_root_only = len(self._prunable(j)) == 0
            self.axis[j], self.cutpoint[j] = grown_axis, grown_cut
            w_prime_big = len(self._prunable(j))
            growable_big = len(self._growable(j))
        finally:
            self.axis[j], self.cutpoint[j] = saved_axis, saved_cut
        p_prune_eff = 1.0 if growable_big == 0 else 1.0 - hp.p_grow
        p_grow_eff = 1.0 if small_root_only else hp.p_grow
        terms += math.log(p_prune_eff) - math.log(w_prime_big)
        terms -= math.log(p_grow_eff) - math.log(w_small)
        return terms

    def _tree_step(self, j, rnd):
        hp = self.hp
        n = self.X.shape[0]
        size = heap_size(hp.max_depth)
        u = rnd.move_u[j]
        growable = self._growable(j)
        prunable = self._prunable(j)

        kind = "none"
        if growable or prunable:
            if growable and (not prunable or u[0] < hp.p_grow):
                kind = "grow"
            else:
                kind = "prune"

        t = 0
        axis_sel = cut_sel = 0
        if kind == "grow":
            t = self._pick(growable, u[1])
            lo, hi = region_bounds(self.axis[j], self.cutpoint[j], t, self.max_cuts)
            open_axes = [a for a in range(len(self.max_cuts)) if hi[a] > lo[a]]
            axis_sel = self._pick(open_axes, u[2])
            n_splits = int(hi[axis_sel] - lo[axis_sel])
            cut_sel = int(lo[axis_sel]) + 1 + min(int(u[3] * n_splits), n_splits - 1)
        elif kind == "prune":
            t = self._pick(prunable, u[4])
            axis_sel = int(self.axis[j, t])
            cut_sel = int(self.cutpoint[j, t])

        # larger tree of the pair and the point assignment under it
        big_axis = self.axis[j].astype(np.int64)
        big_cut = self.cutpoint[j].astype(np.int64)
        if kind == "grow":
            big_axis[t] = axis_sel
            big_cut[t] = cut_sel
        big_idx = self._assign(big_axis, big_cut)

        counts = np.zeros(size, np.int64)
        raw = np.zeros(size, np.float64)
        for i in range(n):
            counts[big_idx[i]] += 1
            raw[big_idx[i]] += float(self.resid[i])
        old_row = self.leaf_value[j].copy()
        adjusted = np.empty(size, np.float64)
        for node in range(size):
            source = node
            if kind == "grow" and node in (2 * t, 2 * t + 1):
                source = t
            adjusted[node] = raw[node] + counts[node] * float(old_row[source])

        # acceptance from the exact marginals of the tree-excluded residuals
        accepted = False
        if kind != "none":
            old_idx = self._assign(self.axis[j].astype(np.int64), self.cutpoint[j].astype(np.int64))
            excluded = self.resid.astype(np.float64) + old_row.astype(np.float64)[old_idx]
            c2, c3 = 2 * t, 2 * t + 1
            in_left = big_idx == c2
            in_right = big_idx == c3
            sigma = math.sqrt(self.sigma2)
            log_lik_ratio = (
                full_leaf_log_marginal(excluded[in_left], sigma, hp)
                + full_leaf_log_marginal(excluded[in_right], sigma, hp)
                - full_leaf_log_marginal(excluded[in_left | in_right], sigma, hp)
            )
            log_ratio = self._structure_log_ratio(j, big_axis, big_cut, t) + log_lik_ratio
            if kind == "prune":
                log_ratio = -log_ratio
            accepted = bool(rnd.accept_u[j] < math.exp(min(log_ratio, 0.0)))

        # resolve the structure
        if accepted:
            if kind == "grow":
                self.axis[j, t] = axis_sel
                self.cutpoint[j, t] = cut_sel
            else:
                self.axis[j, t] = 0
                self.cutpoint[j, t] = 0

        final_is_small = kind != "none" and (accepted != (kind == "grow"))
        cnt = counts
        sums = adjusted
        if final_is_small:
            cnt = counts.copy()
            sums = adjusted.copy()
            cnt[t] = cnt[2 * t] + cnt[2 * t + 1]
            cnt[2 * t] = cnt[2 * t + 1] = 0
            sums[t] = sums[2 * t] + sums[2 * t + 1]
            sums[2 * t] = sums[2 * t + 1] = 0.0

        # redraw every leaf through the shared scalar helpers
        new_row = np.zeros(size, np.float32)
        for node in range(1, size):
            if self._is_leaf(j, node):
                mean, prec = S.leaf_posterior(int(cnt[node]), float(sums[node]), self.sigma2, hp)
                new_row[node] = np.float32(S.draw_leaf_values(mean, prec, float(rnd.leaf_z[j, node])))

        final_idx = self._assign(self.axis[j].astype(np.int64), self.cutpoint[j].astype(np.int64))
        delta = old_row[old_idx if kind != "none" else final_idx] - new_row[final_idx]
        self.resid += delta
        self.leaf_value[j] = new_row
        return accepted

    def step(self):
        hp = self.hp
        rnd = S.StepRandoms.draw(self.rng, hp.n_trees, heap_size(hp.max_depth), hp.nu + self.X.shape[0])
        for j in range(hp.n_trees):
            self.last_accepted[j] = self._tree_step(j, rnd)
        sigma2_new = S.sigma2_draw(self.resid, hp, rnd.chi2_value)
        if hp.update_sigma:
            self.sigma2 = sigma2_new
