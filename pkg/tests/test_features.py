import struct

import numpy as np
import pytest

from painpipe.features import (
    ClipSpec,
    FeatureFormatError,
    FeatureGrid,
    extract_motion_energy,
    l1_response,
    load_feature_grid,
    save_feature_grid,
    segment_clips,
)
from painpipe.video import RawVideo


def make_video(frames, fps=(20, 1)):
    f = np.asarray(frames, dtype=np.uint8)
    return RawVideo(width=f.shape[2], height=f.shape[1],
                    fps_num=fps[0], fps_den=fps[1], frames=f)


class TestSegmentClips:
    def test_five_minutes_at_20fps_gives_200_clips(self):
        v = make_video(np.zeros((6000, 7, 7), dtype=np.uint8), fps=(20, 1))
        clips = segment_clips(v, ClipSpec(1.5))
        assert len(clips) == 200
        assert all(c.frame_count == 30 for c in clips)

    def test_trailing_partial_clip_discarded(self):
        v = make_video(np.arange(8, dtype=np.uint8).reshape(8, 1, 1), fps=(2, 1))
        clips = segment_clips(v, ClipSpec(1.5))  # 3 frames per clip
        assert len(clips) == 2
        assert list(clips[0].frames[:, 0, 0]) == [0, 1, 2]
        assert list(clips[1].frames[:, 0, 0]) == [3, 4, 5]

    def test_too_short_video_rejected(self):
        v = make_video(np.zeros((2, 1, 1), dtype=np.uint8), fps=(2, 1))
        with pytest.raises(ValueError):
            segment_clips(v, ClipSpec(1.5))

    def test_concatenation_reproduces_prefix(self):
        rng = np.random.default_rng(0)
        v = make_video(rng.integers(0, 256, (17, 2, 2), dtype=np.uint8), fps=(4, 1))
        clips = segment_clips(v, ClipSpec(1.0))
        merged = np.concatenate([c.frames for c in clips])
        assert np.array_equal(merged, v.frames[: len(merged)])

    def test_clips_per_video(self):
        v = make_video(np.zeros((600, 7, 7), dtype=np.uint8), fps=(20, 1))
        assert ClipSpec(1.5).clips_per_video(v) == 20


class TestExtractMotionEnergy:
    def test_all_zero_clip(self):
        clip = make_video(np.zeros((8, 14, 14), dtype=np.uint8))
        grid = extract_motion_energy(clip, t_bins=2)
        assert not grid.data.any()
        assert not grid.response.any()

    def test_static_clip_has_no_temporal_channel(self):
        frame = np.zeros((14, 14), dtype=np.uint8)
        frame[3:5, 3:5] = 200
        clip = make_video(np.stack([frame] * 6))
        grid = extract_motion_energy(clip, t_bins=2)
        assert not grid.data[..., 0].any()
        cell = grid.data[:, 1, 1, :]  # the bright patch lives in cell (1, 1)
        assert (cell[:, 1] > 0).all() and (cell[:, 2] > 0).all()
        assert (cell[:, 3] > 0).all()

    def test_hand_computed_single_cell(self):
        # 14x14 -> 2x2 cells; a 2x2 patch fills cell (0, 0): 100 then 50
        f0 = np.zeros((14, 14), dtype=np.uint8)
        f1 = np.zeros((14, 14), dtype=np.uint8)
        f0[0:2, 0:2] = 100
        f1[0:2, 0:2] = 50
        grid = extract_motion_energy(make_video(np.stack([f0, f1])), t_bins=1)
        np.testing.assert_allclose(
            grid.data[0, 0, 0], [50.0, 75.0, 1.0, 25.0]
        )
        assert grid.response[0, 0] == pytest.approx(151.0)
        mask = np.ones((7, 7), dtype=bool)
        mask[0, 0] = False
        assert not grid.response[mask].any()

    def test_translation_equivariance_one_cell(self):
        # shifting the patch by exactly one cell permutes the response grid
        f0 = np.zeros((14, 14), dtype=np.uint8)
        f1 = np.zeros((14, 14), dtype=np.uint8)
        f0[2:4, 4:6] = 90
        f1[2:4, 4:6] = 180
        base = extract_motion_energy(make_video(np.stack([f0, f1])), t_bins=1)
        shifted = extract_motion_energy(
            make_video(np.stack([np.roll(f0, 2, axis=1), np.roll(f1, 2, axis=1)])),
            t_bins=1,
        )
        assert np.allclose(np.roll(base.response, 1, axis=1), shifted.response)

    def test_luminance_scaling(self):
        rng = np.random.default_rng(1)
        small = rng.integers(0, 100, (6, 14, 14), dtype=np.uint8)
        g1 = extract_motion_energy(make_video(small), t_bins=2)
        g2 = extract_motion_energy(make_video(small * 2), t_bins=2)
        for ch in (0, 1, 3):
            np.testing.assert_allclose(
                g2.data[..., ch], 2.0 * g1.data[..., ch], atol=1e-12
            )
        np.testing.assert_allclose(g2.data[..., 2], g1.data[..., 2])

    def test_response_is_l1_of_data(self):
        rng = np.random.default_rng(2)
        clip = make_video(rng.integers(0, 256, (9, 21, 35), dtype=np.uint8))
        grid = extract_motion_energy(clip, t_bins=3)
        np.testing.assert_allclose(grid.response, l1_response(grid.data))

    def test_remainder_pixels_go_to_last_cells(self):
        # 16x16 frames: cells are 2 px wide except the last row/col (4 px)
        f = np.zeros((16, 16), dtype=np.uint8)
        f[13, 13] = 255  # inside cell (6, 6) only if the last cell is wider
        clip = make_video(np.stack([f, f, f]))
        grid = extract_motion_energy(clip, t_bins=1)
        assert grid.response[6, 6] > 0
        assert grid.response.sum() == pytest.approx(grid.response[6, 6])

    def test_too_small_frame_rejected(self):
        clip = make_video(np.zeros((4, 6, 20), dtype=np.uint8))
        with pytest.raises(ValueError):
            extract_motion_energy(clip, t_bins=1)

    def test_too_few_frames_rejected(self):
        clip = make_video(np.zeros((3, 14, 14), dtype=np.uint8))
        with pytest.raises(ValueError):
            extract_motion_energy(clip, t_bins=3)


class TestFeatureGridFile:
    def roundtrip(self, tmp_path, grid, include_response=True):
        path = tmp_path / "g.mpfg"
        save_feature_grid(grid, path, include_response=include_response)
        return load_feature_grid(path)

    def test_round_trip_exact_at_f32(self, tmp_path):
        rng = np.random.default_rng(3)
        data = rng.normal(size=(4, 7, 7, 4))
        grid = FeatureGrid(data=data, response=l1_response(data))
        loaded = self.roundtrip(tmp_path, grid)
        assert np.array_equal(
            loaded.data, grid.data.astype(np.float32).astype(np.float64)
        )
        assert np.array_equal(
            loaded.response, grid.response.astype(np.float32).astype(np.float64)
        )

    def test_missing_response_recomputed_as_l1(self, tmp_path):
        rng = np.random.default_rng(4)
        data = rng.normal(size=(2, 7, 7, 3))
        grid = FeatureGrid(data=data, response=l1_response(data))
        loaded = self.roundtrip(tmp_path, grid, include_response=False)
        np.testing.assert_allclose(loaded.response, l1_response(loaded.data))

    def test_zero_data_zero_response(self, tmp_path):
        grid = FeatureGrid(data=np.zeros((2, 7, 7, 4)), response=np.zeros((7, 7)))
        loaded = self.roundtrip(tmp_path, grid, include_response=False)
        assert not loaded.response.any()

    def test_unsupported_layout_rejected(self, tmp_path):
        path = tmp_path / "bad.mpfg"
        header = struct.pack("<4sHIIIIB3x", b"MPFG", 1, 2, 8, 8, 4, 0)
        path.write_bytes(header + b"\x00" * (4 * 2 * 8 * 8 * 4))
        with pytest.raises(FeatureFormatError, match="unsupported spatial layout"):
            load_feature_grid(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.mpfg"
        path.write_bytes(b"NOPE" + bytes(30))
        with pytest.raises(FeatureFormatError, match="magic"):
            load_feature_grid(path)

    def test_non_finite_rejected(self, tmp_path):
        path = tmp_path / "nan.mpfg"
        header = struct.pack("<4sHIIIIB3x", b"MPFG", 1, 1, 7, 7, 1, 0)
        data = np.full(49, np.nan, dtype="<f4")
        path.write_bytes(header + data.tobytes())
        with pytest.raises(FeatureFormatError, match="non-finite"):
            load_feature_grid(path)

    def test_grid_validation(self):
        with pytest.raises(ValueError, match="unsupported spatial layout"):
            FeatureGrid(data=np.zeros((2, 8, 8, 1)), response=np.zeros((7, 7)))
        with pytest.raises(ValueError, match="negative response"):
            FeatureGrid(data=np.zeros((2, 7, 7, 1)), response=np.full((7, 7), -1.0))
