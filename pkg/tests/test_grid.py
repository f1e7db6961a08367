import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bforge import grid


class TestUniformGrid:
    def test_single_midpoint(self):
        g = grid.build_grid_uniform(np.array([[0.0], [1.0]]), 1)
        np.testing.assert_allclose(g.cutpoints[0], [0.5])

    def test_three_equal_spacings(self):
        g = grid.build_grid_uniform(np.array([[0.0], [1.0]]), 3)
        np.testing.assert_allclose(g.cutpoints[0], [0.25, 0.5, 0.75])

    def test_spacing_is_range_over_k_plus_one(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(10_000, 1))
        g = grid.build_grid_uniform(x, 100)
        cuts = g.cutpoints[0]
        assert cuts.size == 100
        expected = (x.max() - x.min()) / 101
        spacings = np.diff(cuts)
        np.testing.assert_allclose(spacings, expected, rtol=1e-12)
        assert x.min() < cuts[0] and cuts[-1] < x.max()

    def test_degenerate_axis_flagged(self):
        g = grid.build_grid_uniform(np.array([[1.0, 0.0], [1.0, 2.0]]), 5)
        assert g.degenerate.tolist() == [True, False]
        assert g.counts.tolist() == [0, 5]

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            grid.build_grid_uniform(np.zeros((3, 1)), 256)


class TestMidpointGrid:
    def test_pairwise_midpoints(self):
        g = grid.build_grid_midpoints(np.array([[1.0], [2.0], [4.0]]))
        np.testing.assert_allclose(g.cutpoints[0], [1.5, 3.0])

    def test_two_distinct_values_one_cutpoint(self):
        g = grid.build_grid_midpoints(np.array([[0.0], [0.0], [7.0]]))
        assert g.counts.tolist() == [1]
        np.testing.assert_allclose(g.cutpoints[0], [3.5])

    def test_thinning_keeps_true_midpoints(self):
        values = np.arange(1000.0)[:, None]
        full_mids = 0.5 * (values[:-1, 0] + values[1:, 0])
        g = grid.build_grid_midpoints(values)
        cuts = g.cutpoints[0]
        assert cuts.size == 255
        assert np.isin(cuts, full_mids).all()
        assert (np.diff(cuts) > 0).all()

    def test_single_value_degenerate(self):
        g = grid.build_grid_midpoints(np.full((5, 1), 3.0))
        assert g.degenerate.tolist() == [True]


class TestQuantize:
    def test_below_all_cutpoints_is_zero(self):
        g = grid.CutpointGrid([np.array([1.0, 2.0, 3.0])])
        q = grid.quantize(np.array([[0.5]]), g)
        assert q.data[0, 0] == 0

    def test_tie_goes_right(self):
        g = grid.CutpointGrid([np.array([1.0, 2.0, 3.0])])
        q = grid.quantize(np.array([[2.0]]), g)
        assert q.data[0, 0] == 2

    def test_clamps_outside_training_range(self):
        g = grid.CutpointGrid([np.array([1.0, 2.0])])
        q = grid.quantize(np.array([[-10.0], [10.0]]), g)
        assert q.data[:, 0].tolist() == [0, 2]

    @given(seed=st.integers(0, 2**32 - 1))
    def test_index_comparison_reproduces_value_comparison(self, seed):
        rng = np.random.default_rng(seed)
        cuts = np.sort(rng.uniform(-1, 1, size=rng.integers(1, 20)))
        cuts = np.unique(cuts)
        g = grid.CutpointGrid([cuts])
        values = rng.uniform(-1.5, 1.5, size=50)
        q = grid.quantize(values[:, None], g)
        for value, index in zip(values, q.data[:, 0]):
            for c in range(1, cuts.size + 1):
                assert (index >= c) == (value >= cuts[c - 1])

    def test_idempotent_on_snapped_values(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(size=(200, 2))
        g = grid.build_grid_uniform(x, 10)
        q1 = grid.quantize(x, g)
        # map each index to a representative value inside its cell, requantize
        reps = np.empty_like(x)
        for j, cuts in enumerate(g.cutpoints):
            edges = np.concatenate([[x[:, j].min() - 1], cuts, [x[:, j].max() + 1]])
            reps[:, j] = 0.5 * (edges[q1.data[:, j]] + edges[q1.data[:, j] + 1])
        q2 = grid.quantize(reps, g)
        np.testing.assert_array_equal(q1.data, q2.data)

    def test_payload_is_n_times_p_bytes(self):
        x = np.random.default_rng(0).uniform(size=(37, 4))
        q = grid.quantize(x, grid.build_grid_uniform(x, 9))
        assert q.data.nbytes == 37 * 4
        assert q.data.dtype == np.uint8

    def test_degenerate_axis_quantizes_to_zero(self):
        x = np.column_stack([np.full(10, 2.0), np.arange(10.0)])
        g = grid.build_grid_uniform(x, 5)
        q = grid.quantize(x, g)
        assert (q.data[:, 0] == 0).all()
