import numpy as np
import pytest

from painpipe.background import (
    compute_background,
    compute_background_streaming,
    extract_foreground,
)
from painpipe.video import RawVideo, save_video


def make_video(frames, fps=(2, 1)):
    f = np.asarray(frames, dtype=np.uint8)
    return RawVideo(width=f.shape[2], height=f.shape[1],
                    fps_num=fps[0], fps_den=fps[1], frames=f)


def pixel_series(values):
    """1x1 video whose single pixel runs through the given values."""
    return make_video(np.asarray(values, dtype=np.uint8).reshape(-1, 1, 1))


def brute_median(video):
    """Independent per-pixel lower median via python sorting."""
    n, h, w = video.frames.shape
    out = np.zeros((h, w), dtype=np.uint8)
    for r in range(h):
        for c in range(w):
            series = sorted(int(v) for v in video.frames[:, r, c])
            out[r, c] = series[(n - 1) // 2]
    return out


class TestComputeBackground:
    def test_constant_video(self):
        frame = np.arange(6, dtype=np.uint8).reshape(2, 3)
        v = make_video(np.stack([frame] * 4))
        assert np.array_equal(compute_background(v).median_frame, frame)

    def test_odd_count_median(self):
        bg = compute_background(pixel_series([10, 200, 12, 11, 13]))
        assert bg.median_frame[0, 0] == 12

    def test_even_count_lower_median(self):
        bg = compute_background(pixel_series([4, 8]))
        assert bg.median_frame[0, 0] == 4

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(1, 12))
            v = make_video(rng.integers(0, 256, size=(n, 3, 4), dtype=np.uint8))
            assert np.array_equal(
                compute_background(v).median_frame, brute_median(v)
            )

    def test_frame_order_invariant(self):
        rng = np.random.default_rng(4)
        v = make_video(rng.integers(0, 256, size=(7, 2, 2), dtype=np.uint8))
        shuffled = make_video(v.frames[rng.permutation(7)])
        assert np.array_equal(
            compute_background(v).median_frame,
            compute_background(shuffled).median_frame,
        )

    def test_constant_shift_moves_median(self):
        rng = np.random.default_rng(5)
        frames = rng.integers(40, 180, size=(9, 2, 2), dtype=np.uint8)
        base = compute_background(make_video(frames)).median_frame
        shifted = compute_background(make_video(frames + 30)).median_frame
        assert np.array_equal(shifted, base + 30)


class TestStreamingBackground:
    def test_bit_exact_to_sort_based(self, tmp_path):
        rng = np.random.default_rng(6)
        for i in range(25):
            n = int(rng.integers(1, 20))
            v = make_video(rng.integers(0, 256, size=(n, 4, 5), dtype=np.uint8))
            path = tmp_path / f"v{i}.mpvr"
            save_video(v, path)
            streamed = compute_background_streaming(path)
            assert np.array_equal(
                streamed.median_frame, compute_background(v).median_frame
            )
            assert streamed.source_frame_count == n

    def test_load_errors_propagate(self, tmp_path):
        path = tmp_path / "empty.mpvr"
        path.write_bytes(b"")
        with pytest.raises(ValueError):
            compute_background_streaming(path)


class TestExtractForeground:
    def test_video_equal_to_background_is_zero(self):
        frame = np.full((3, 3), 77, dtype=np.uint8)
        v = make_video(np.stack([frame] * 5))
        fg = extract_foreground(v, compute_background(v), threshold=40)
        assert not fg.frames.any()

    def test_absolute_difference(self):
        v = pixel_series([100])
        bg = compute_background(pixel_series([40]))
        assert extract_foreground(v, bg, threshold=0).frames[0, 0, 0] == 60

    def test_below_threshold_suppressed(self):
        v = pixel_series([100])
        bg = compute_background(pixel_series([95]))
        assert extract_foreground(v, bg, threshold=10).frames[0, 0, 0] == 0
        assert extract_foreground(v, bg, threshold=5).frames[0, 0, 0] == 5

    def test_dimension_mismatch_rejected(self):
        v = make_video(np.zeros((2, 2, 2), dtype=np.uint8))
        bg = compute_background(make_video(np.zeros((2, 3, 3), dtype=np.uint8)))
        with pytest.raises(ValueError):
            extract_foreground(v, bg)

    def test_zero_iff_all_deviations_below_threshold(self):
        rng = np.random.default_rng(7)
        v = make_video(rng.integers(90, 110, size=(6, 3, 3), dtype=np.uint8))
        bg = compute_background(v)
        max_dev = int(
            np.abs(v.frames.astype(int) - bg.median_frame.astype(int)).max()
        )
        assert not extract_foreground(v, bg, threshold=max_dev + 1).frames.any()
        assert extract_foreground(v, bg, threshold=max_dev).frames.any()
