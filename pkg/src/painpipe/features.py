"""Clip segmentation and per-clip spatio-temporal feature grids.

A foreground video is cut into fixed-length clips (default 1.5 s).  Each
clip becomes a T x 7 x 7 x D tensor over a fixed 7x7 spatial grid of
near-equal cells (remainder pixels go to the last row/column) and T
near-equal temporal bins, with D = 4 motion-energy channels:

    0: mean |frame[t+1] - frame[t]| over consecutive pairs inside the bin
    1: mean luminance
    2: fraction of nonzero pixels
    3: standard deviation of luminance

plus a 7x7 response grid, the per-cell L1 energy of the tensor.  The same
tensor layout can be filled by externally precomputed features through the
MPFG file format below, so the built-in extractor is replaceable.

MPFG format (little-endian)::

    magic        4 bytes  b"MPFG"
    version      u16      = 1
    t_bins       u32
    grid_h       u32      = 7
    grid_w       u32      = 7
    channels     u32
    has_response u8
    reserved     3 bytes
    data         t_bins*7*7*channels f32, index order (t, row, col, channel)
    response     49 f32, row-major (only if has_response)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .video import RawVideo

GRID = 7
N_CHANNELS = 4

MPFG_MAGIC = b"MPFG"
MPFG_VERSION = 1
_MPFG_HEADER = struct.Struct("<4sHIIIIB3x")


class FeatureFormatError(ValueError):
    """Raised for malformed MPFG files."""


@dataclass(frozen=True)
class ClipSpec:
    clip_seconds: float = 1.5

    def __post_init__(self) -> None:
        if self.clip_seconds <= 0:
            raise ValueError("clip_seconds must be positive")

    def frames_per_clip(self, fps_num: int, fps_den: int) -> int:
        n = int(Fraction(self.clip_seconds) * fps_num / fps_den)
        if n < 2:
            raise ValueError(
                f"{self.clip_seconds}s clips need >= 2 frames at "
                f"{fps_num}/{fps_den} fps"
            )
        return n

    def clips_per_video(self, video: RawVideo) -> int:
        return video.frame_count // self.frames_per_clip(
            video.fps_num, video.fps_den
        )


@dataclass(frozen=True)
class FeatureGrid:
    """Per-clip feature tensor (t_bins, 7, 7, channels) plus 7x7 response."""

    data: np.ndarray
    response: np.ndarray

    def __post_init__(self) -> None:
        d = np.asarray(self.data, dtype=np.float64)
        r = np.asarray(self.response, dtype=np.float64)
        if d.ndim != 4 or d.shape[1] != GRID or d.shape[2] != GRID:
            raise ValueError(f"unsupported spatial layout {d.shape}")
        if d.shape[0] < 1 or d.shape[3] < 1:
            raise ValueError(f"degenerate tensor shape {d.shape}")
        if r.shape != (GRID, GRID):
            raise ValueError(f"response must be {GRID}x{GRID}, got {r.shape}")
        if not np.isfinite(d).all() or not np.isfinite(r).all():
            raise ValueError("non-finite feature entries")
        if (r < 0).any():
            raise ValueError("negative response entries")
        d.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "data", d)
        object.__setattr__(self, "response", r)

    @property
    def t_bins(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


def l1_response(data: np.ndarray) -> np.ndarray:
    """Per-cell L1 energy: sum of |data| over bins and channels."""
    return np.abs(data).sum(axis=(0, 3))


def segment_clips(video: RawVideo, spec: ClipSpec) -> list[RawVideo]:
    """Consecutive non-overlapping clips; a trailing partial clip is dropped."""
    fpc = spec.frames_per_clip(video.fps_num, video.fps_den)
    n_clips = video.frame_count // fpc
    if n_clips < 1:
        raise ValueError(
            f"video of {video.frame_count} frames shorter than one "
            f"{spec.clip_seconds}s clip ({fpc} frames)"
        )
    return [
        RawVideo(
            width=video.width,
            height=video.height,
            fps_num=video.fps_num,
            fps_den=video.fps_den,
            frames=video.frames[i * fpc : (i + 1) * fpc],
        )
        for i in range(n_clips)
    ]


def _cell_edges(size: int) -> list[int]:
    """7 near-equal intervals over [0, size); remainder goes to the last cell."""
    base = size // GRID
    edges = [i * base for i in range(GRID)]
    edges.append(size)
    return edges


def _bin_edges(n_frames: int, t_bins: int) -> list[int]:
    """Near-equal temporal bins (sizes differ by at most one)."""
    return [math.floor(i * n_frames / t_bins) for i in range(t_bins + 1)]


def extract_motion_energy(clip: RawVideo, t_bins: int = 4) -> FeatureGrid:
    """Motion-energy feature grid of a (foreground) clip."""
    if t_bins < 1:
        raise ValueError("t_bins must be >= 1")
    if clip.frame_count < t_bins + 1:
        raise ValueError(
            f"clip of {clip.frame_count} frames too short for {t_bins} bins"
        )
    if clip.width < GRID or clip.height < GRID:
        raise ValueError(
            f"frame {clip.height}x{clip.width} too small for a {GRID}x{GRID} grid"
        )

    frames = clip.frames.astype(np.float64)
    diffs = np.abs(np.diff(frames, axis=0))
    rows = _cell_edges(clip.height)
    cols = _cell_edges(clip.width)
    tbins = _bin_edges(clip.frame_count, t_bins)

    data = np.zeros((t_bins, GRID, GRID, N_CHANNELS))
    for t in range(t_bins):
        lo, hi = tbins[t], tbins[t + 1]
        seg = frames[lo:hi]
        # consecutive pairs (i, i+1) with both frames inside the bin
        dseg = diffs[lo : hi - 1] if hi - lo >= 2 else None
        for r in range(GRID):
            for c in range(GRID):
                cell = seg[:, rows[r] : rows[r + 1], cols[c] : cols[c + 1]]
                data[t, r, c, 1] = cell.mean()
                data[t, r, c, 2] = np.count_nonzero(cell) / cell.size
                data[t, r, c, 3] = cell.std()
                if dseg is not None:
                    data[t, r, c, 0] = dseg[
                        :, rows[r] : rows[r + 1], cols[c] : cols[c + 1]
                    ].mean()
    return FeatureGrid(data=data, response=l1_response(data))


def save_feature_grid(
    grid: FeatureGrid, path: str | Path, include_response: bool = True
) -> None:
    """Write an MPFG file (data quantized to f32)."""
    header = _MPFG_HEADER.pack(
        MPFG_MAGIC,
        MPFG_VERSION,
        grid.t_bins,
        GRID,
        GRID,
        grid.channels,
        1 if include_response else 0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(grid.data.astype("<f4").tobytes())
        if include_response:
            fh.write(grid.response.astype("<f4").tobytes())


def load_feature_grid(path: str | Path) -> FeatureGrid:
    """Read an MPFG file; recomputes the response as L1 energy if absent."""
    with open(path, "rb") as fh:
        raw = fh.read(_MPFG_HEADER.size)
        if len(raw) < _MPFG_HEADER.size:
            raise FeatureFormatError("truncated header")
        magic, version, t_bins, gh, gw, channels, has_resp = _MPFG_HEADER.unpack(raw)
        if magic != MPFG_MAGIC:
            raise FeatureFormatError(f"bad magic {magic!r}")
        if version != MPFG_VERSION:
            raise FeatureFormatError(f"unsupported version {version}")
        if gh != GRID or gw != GRID:
            raise FeatureFormatError(f"unsupported spatial layout {gh}x{gw}")
        if t_bins < 1 or channels < 1:
            raise FeatureFormatError(f"invalid dimensions T={t_bins} D={channels}")
        count = t_bins * GRID * GRID * channels
        payload = fh.read(4 * count)
        if len(payload) < 4 * count:
            raise FeatureFormatError("truncated data block")
        data = (
            np.frombuffer(payload, dtype="<f4")
            .astype(np.float64)
            .reshape(t_bins, GRID, GRID, channels)
        )
        if has_resp:
            rraw = fh.read(4 * GRID * GRID)
            if len(rraw) < 4 * GRID * GRID:
                raise FeatureFormatError("truncated response block")
            response = (
                np.frombuffer(rraw, dtype="<f4")
                .astype(np.float64)
                .reshape(GRID, GRID)
            )
        else:
            response = l1_response(data)
    if not np.isfinite(data).all():
        raise FeatureFormatError("non-finite feature entries")
    return FeatureGrid(data=data, response=response)
