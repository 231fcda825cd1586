import numpy as np
import pytest

from painpipe.video import (
    RawVideo,
    VideoFormatError,
    crop_time,
    load_video,
    read_pnm,
    rgb_to_luminance,
    save_video,
    write_pgm,
)


def make_video(frames, fps_num=2, fps_den=1):
    f = np.asarray(frames, dtype=np.uint8)
    return RawVideo(
        width=f.shape[2], height=f.shape[1], fps_num=fps_num, fps_den=fps_den,
        frames=f,
    )


def random_video(rng, n=5, h=4, w=6, fps=(3, 1)):
    return make_video(
        rng.integers(0, 256, size=(n, h, w), dtype=np.uint8),
        fps_num=fps[0], fps_den=fps[1],
    )


class TestRawVideo:
    def test_rejects_empty_frames(self):
        with pytest.raises(ValueError):
            make_video(np.zeros((0, 2, 2), dtype=np.uint8))

    def test_rejects_bad_fps(self):
        with pytest.raises(ValueError):
            make_video(np.zeros((1, 2, 2), dtype=np.uint8), fps_num=0)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            RawVideo(width=3, height=2, fps_num=1, fps_den=1,
                     frames=np.zeros((1, 2, 2), dtype=np.uint8))

    def test_duration_exact_rational(self):
        v = make_video(np.zeros((10, 2, 2), dtype=np.uint8), fps_num=3)
        assert v.duration * 3 == 10

    def test_frames_immutable(self):
        v = make_video(np.zeros((1, 2, 2), dtype=np.uint8))
        with pytest.raises(ValueError):
            v.frames[0, 0, 0] = 1


class TestContainerRoundTrip:
    def test_round_trip_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        for _ in range(5):
            v = random_video(rng)
            path = tmp_path / "v.mpvr"
            save_video(v, path)
            w = load_video(path)
            assert w.width == v.width and w.height == v.height
            assert (w.fps_num, w.fps_den) == (v.fps_num, v.fps_den)
            assert np.array_equal(w.frames, v.frames)

    def test_minimal_video_payload_is_one_byte(self, tmp_path):
        v = make_video(np.zeros((1, 1, 1), dtype=np.uint8), fps_num=1)
        path = tmp_path / "tiny.mpvr"
        save_video(v, path)
        assert path.stat().st_size == 34 + 1  # header + single sample

    def test_truncated_payload_rejected(self, tmp_path):
        v = make_video(np.zeros((10, 2, 2), dtype=np.uint8))
        path = tmp_path / "v.mpvr"
        save_video(v, path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) - 4])  # drop one frame's worth
        with pytest.raises(VideoFormatError, match="truncated payload"):
            load_video(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.mpvr"
        path.write_bytes(b"JUNK" + bytes(40))
        with pytest.raises(VideoFormatError, match="magic"):
            load_video(path)

    def test_zero_frames_rejected(self, tmp_path):
        v = make_video(np.zeros((1, 2, 2), dtype=np.uint8))
        path = tmp_path / "v.mpvr"
        save_video(v, path)
        data = bytearray(path.read_bytes())
        data[22:26] = (0).to_bytes(4, "little")  # frame_count field
        path.write_bytes(bytes(data))
        with pytest.raises(VideoFormatError, match="zero frames"):
            load_video(path)


class TestFrameDirectory:
    def test_pgm_directory(self, tmp_path):
        frame = np.arange(4, dtype=np.uint8).reshape(2, 2)
        for i in range(3):
            write_pgm(frame, tmp_path / f"f{i}.pgm")
        v = load_video(tmp_path)
        assert (v.width, v.height, v.frame_count) == (2, 2, 3)
        assert np.array_equal(v.frames[0], frame)

    def test_inconsistent_dimensions_rejected(self, tmp_path):
        write_pgm(np.zeros((2, 2), dtype=np.uint8), tmp_path / "a.pgm")
        write_pgm(np.zeros((3, 2), dtype=np.uint8), tmp_path / "b.pgm")
        with pytest.raises(VideoFormatError, match="expected"):
            load_video(tmp_path)

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(VideoFormatError, match="no PGM"):
            load_video(tmp_path)

    def test_lexicographic_order(self, tmp_path):
        for name, value in [("b.pgm", 2), ("a.pgm", 1), ("c.pgm", 3)]:
            write_pgm(np.full((1, 1), value, dtype=np.uint8), tmp_path / name)
        v = load_video(tmp_path)
        assert list(v.frames[:, 0, 0]) == [1, 2, 3]

    def test_ppm_reduced_to_luminance(self, tmp_path):
        # pure red pixel: round(0.299 * 255) = 76
        path = tmp_path / "f.ppm"
        path.write_bytes(b"P6\n1 1\n255\n" + bytes([255, 0, 0]))
        assert read_pnm(path)[0, 0] == 76

    def test_luminance_weights(self):
        rgb = np.array([[[0, 255, 0]]], dtype=np.uint8)
        assert rgb_to_luminance(rgb)[0, 0] == round(0.587 * 255)
        white = np.array([[[255, 255, 255]]], dtype=np.uint8)
        assert rgb_to_luminance(white)[0, 0] == 255


class TestCropTime:
    def test_full_crop_is_identity(self):
        rng = np.random.default_rng(1)
        v = random_video(rng)
        w = crop_time(v, 0, float(v.duration))
        assert np.array_equal(w.frames, v.frames)

    def test_half_open_window(self):
        v = make_video(np.arange(10, dtype=np.uint8).reshape(10, 1, 1))
        w = crop_time(v, 0, 1.5)  # 2 fps: frames at t = 0, 0.5, 1.0
        assert list(w.frames[:, 0, 0]) == [0, 1, 2]

    def test_empty_window_rejected(self):
        v = make_video(np.zeros((4, 1, 1), dtype=np.uint8))
        with pytest.raises(ValueError):
            crop_time(v, 3, 3)

    def test_crop_composition(self):
        rng = np.random.default_rng(2)
        v = random_video(rng, n=12, fps=(4, 1))
        once = crop_time(v, 0.5, 2.5)
        twice = crop_time(crop_time(v, 0, float(v.duration)), 0.5, 2.5)
        assert np.array_equal(once.frames, twice.frames)

    def test_fps_preserved(self):
        v = make_video(np.zeros((10, 1, 1), dtype=np.uint8), fps_num=5, fps_den=2)
        w = crop_time(v, 0, 2.0)
        assert (w.fps_num, w.fps_den) == (5, 2)
