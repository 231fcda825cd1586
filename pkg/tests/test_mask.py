import numpy as np
import pytest

from painpipe.features import FeatureGrid, l1_response
from painpipe.mask import MaskWindow, apply_mask, mask_pipeline, select_window


def brute_force_window(response):
    """Independent exhaustive search over the 25 candidate windows."""
    best = None
    best_sum = -1.0
    for r in range(5):
        for c in range(5):
            s = float(response[r : r + 3, c : c + 3].sum())
            if s > best_sum:
                best, best_sum = (r, c), s
    return best


def random_grid(rng, integral=False):
    if integral:
        return rng.integers(0, 5, size=(7, 7)).astype(np.float64)
    return rng.uniform(0.0, 10.0, size=(7, 7))


class TestSelectWindow:
    def test_uniform_response_ties_to_origin(self):
        w = select_window(np.ones((7, 7)))
        assert (w.row, w.col) == (0, 0)

    def test_single_hot_cell_center(self):
        r = np.zeros((7, 7))
        r[3, 3] = 1.0
        w = select_window(r)
        assert (w.row, w.col) == (1, 1)  # first window containing (3, 3)

    def test_gradient_response_bottom_right(self):
        rows, cols = np.meshgrid(np.arange(7), np.arange(7), indexing="ij")
        w = select_window((rows + cols).astype(np.float64))
        assert (w.row, w.col) == (4, 4)

    @pytest.mark.parametrize("integral", [False, True])
    def test_matches_brute_force(self, integral):
        rng = np.random.default_rng(11)
        for _ in range(500):
            r = random_grid(rng, integral=integral)
            w = select_window(r)
            assert (w.row, w.col) == brute_force_window(r)

    def test_scale_invariance(self):
        rng = np.random.default_rng(12)
        for _ in range(50):
            r = random_grid(rng)
            w1 = select_window(r)
            w2 = select_window(r * 37.5)
            assert (w1.row, w1.col) == (w2.row, w2.col)

    def test_rejects_negative_or_non_finite(self):
        with pytest.raises(ValueError):
            select_window(np.full((7, 7), -1.0))
        with pytest.raises(ValueError):
            select_window(np.full((7, 7), np.nan))

    def test_window_bounds(self):
        with pytest.raises(ValueError):
            MaskWindow(row=5, col=0)


def make_grid(rng, t=3, d=4):
    data = rng.uniform(0.0, 2.0, size=(t, 7, 7, d))
    return FeatureGrid(data=data, response=l1_response(data))


class TestApplyMask:
    def test_idempotent(self):
        rng = np.random.default_rng(13)
        g = make_grid(rng)
        w = MaskWindow(2, 3)
        once = apply_mask(g, w)
        twice = apply_mask(once, w)
        assert np.array_equal(once.data, twice.data)
        assert np.array_equal(once.response, twice.response)

    def test_zero_grid_stays_zero(self):
        g = FeatureGrid(data=np.zeros((2, 7, 7, 4)), response=np.zeros((7, 7)))
        masked = apply_mask(g, MaskWindow(0, 0))
        assert not masked.data.any()

    def test_inside_untouched_outside_zeroed(self):
        rng = np.random.default_rng(14)
        g = make_grid(rng)
        w = MaskWindow(1, 2)
        masked = apply_mask(g, w)
        inside = (slice(None), slice(1, 4), slice(2, 5), slice(None))
        assert np.array_equal(masked.data[inside], g.data[inside])
        keep = np.zeros((7, 7), dtype=bool)
        keep[1:4, 2:5] = True
        assert not masked.data[:, ~keep, :].any()
        assert not masked.response[~keep].any()

    def test_energy_only_inside_window_is_identity(self):
        data = np.zeros((2, 7, 7, 4))
        data[:, 1:4, 1:4, :] = 1.5
        g = FeatureGrid(data=data, response=l1_response(data))
        masked = apply_mask(g, MaskWindow(1, 1))
        assert np.array_equal(masked.data, g.data)

    def test_exactly_nine_cells_survive(self):
        rng = np.random.default_rng(15)
        g = make_grid(rng)
        masked, w = mask_pipeline(g)
        alive = np.argwhere(masked.response > 0)
        assert len(alive) == 9
        rows, cols = alive[:, 0], alive[:, 1]
        assert rows.min() == w.row and rows.max() == w.row + 2
        assert cols.min() == w.col and cols.max() == w.col + 2


class TestMaskPipeline:
    def test_uniform_grid(self):
        data = np.ones((2, 7, 7, 4))
        g = FeatureGrid(data=data, response=l1_response(data))
        masked, w = mask_pipeline(g)
        assert (w.row, w.col) == (0, 0)
        assert np.count_nonzero(masked.response) == 9

    def test_hot_cell_retains_window(self):
        data = np.zeros((1, 7, 7, 1))
        data[0, 3, 3, 0] = 2.0
        g = FeatureGrid(data=data, response=l1_response(data))
        masked, w = mask_pipeline(g)
        assert (w.row, w.col) == (1, 1)
        assert masked.data[0, 3, 3, 0] == 2.0

    def test_masked_energy_never_exceeds_unmasked(self):
        rng = np.random.default_rng(16)
        for _ in range(25):
            g = make_grid(rng)
            masked, _ = mask_pipeline(g)
            assert np.abs(masked.data).sum() <= np.abs(g.data).sum() + 1e-12
