"""Raw video representation and lossless on-disk container.

Videos are fixed-resolution 8-bit grayscale frame stacks with a rational
frame rate.  Downstream stages (background modeling, feature grids) only
ever see luminance, so color inputs are reduced at ingestion.

On-disk formats:

* MPVR container (little-endian), the canonical lossless format::

      magic        4 bytes  b"MPVR"
      version      u16      = 1
      width        u32
      height       u32
      fps_num      u32
      fps_den      u32
      frame_count  u32
      channels     u8       = 1
      reserved     7 bytes  0x00
      payload      frame_count * width * height bytes, row-major luminance

* a directory of binary PGM (P5, maxval 255) frames, ordered
  lexicographically by filename.  PPM (P6) frames are accepted and reduced
  to luminance via round(0.299 R + 0.587 G + 0.114 B).
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

MPVR_MAGIC = b"MPVR"
MPVR_VERSION = 1
_HEADER = struct.Struct("<4sHIIIIIB7x")  # 34 bytes


class VideoFormatError(ValueError):
    """Raised for malformed container files or frame images."""


@dataclass(frozen=True)
class RawVideo:
    """Immutable grayscale frame stack.

    frames has shape (n, height, width), dtype uint8; fps is the exact
    rational fps_num / fps_den.
    """

    width: int
    height: int
    fps_num: int
    fps_den: int
    frames: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        if self.fps_num <= 0 or self.fps_den <= 0:
            raise ValueError("fps numerator and denominator must be positive")
        f = np.asarray(self.frames)
        if f.dtype != np.uint8:
            raise ValueError(f"frames must be uint8, got {f.dtype}")
        if f.ndim != 3 or f.shape[0] < 1:
            raise ValueError("frames must be a nonempty (n, h, w) stack")
        if f.shape[1] != self.height or f.shape[2] != self.width:
            raise ValueError(
                f"frame shape {f.shape[1:]} does not match declared "
                f"{self.height}x{self.width}"
            )
        f = np.ascontiguousarray(f)
        f.setflags(write=False)  # shared safely across workers
        object.__setattr__(self, "frames", f)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def fps(self) -> Fraction:
        return Fraction(self.fps_num, self.fps_den)

    @property
    def duration(self) -> Fraction:
        """Exact duration in seconds: frame_count * fps_den / fps_num."""
        return Fraction(self.frame_count * self.fps_den, self.fps_num)


def load_video(path: str | Path) -> RawVideo:
    """Load an MPVR container file or a directory of PGM/PPM frames."""
    path = Path(path)
    if path.is_dir():
        return _load_frame_dir(path)
    return _load_container(path)


def save_video(video: RawVideo, path: str | Path) -> None:
    """Write an MPVR container; load_video round-trips it bit-exactly."""
    header = _HEADER.pack(
        MPVR_MAGIC,
        MPVR_VERSION,
        video.width,
        video.height,
        video.fps_num,
        video.fps_den,
        video.frame_count,
        1,
    )
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(video.frames.tobytes())


def crop_time(video: RawVideo, start: float, end: float) -> RawVideo:
    """Keep frames with start <= i/fps < end (exact rational comparison)."""
    qs = Fraction(start)
    qe = Fraction(end)
    if qe > video.duration and float(end) == float(video.duration):
        qe = video.duration  # caller passed the float-rounded duration
    if not (0 <= qs < qe <= video.duration):
        raise ValueError(
            f"invalid crop window [{start}, {end}) for duration {float(video.duration)}"
        )
    rate = video.fps
    first = math.ceil(qs * rate)
    last = math.ceil(qe * rate) - 1  # largest i with i < end*fps
    if last < first:
        raise ValueError(f"empty result window [{start}, {end})")
    return RawVideo(
        width=video.width,
        height=video.height,
        fps_num=video.fps_num,
        fps_den=video.fps_den,
        frames=video.frames[first : last + 1],
    )


def rgb_to_luminance(rgb: np.ndarray) -> np.ndarray:
    """Rec.601 luminance, rounded half-up to the 8-bit lattice."""
    f = rgb.astype(np.float64)
    y = 0.299 * f[..., 0] + 0.587 * f[..., 1] + 0.114 * f[..., 2]
    return np.floor(y + 0.5).astype(np.uint8)


# --------------------------------------------------------------------------
# MPVR container
# --------------------------------------------------------------------------

def read_container_header(fh) -> tuple[int, int, int, int, int]:
    """Parse and validate an MPVR header; returns (w, h, fps_num, fps_den, n)."""
    raw = fh.read(_HEADER.size)
    if len(raw) < _HEADER.size:
        raise VideoFormatError("truncated header")
    magic, version, w, h, num, den, n, channels = _HEADER.unpack(raw)
    if magic != MPVR_MAGIC:
        raise VideoFormatError(f"bad magic {magic!r}")
    if version != MPVR_VERSION:
        raise VideoFormatError(f"unsupported version {version}")
    if channels != 1:
        raise VideoFormatError(f"unsupported channel count {channels}")
    if w < 1 or h < 1:
        raise VideoFormatError(f"invalid dimensions {w}x{h}")
    if num < 1 or den < 1:
        raise VideoFormatError(f"invalid fps {num}/{den}")
    if n < 1:
        raise VideoFormatError("zero frames")
    return w, h, num, den, n


def _load_container(path: Path) -> RawVideo:
    with open(path, "rb") as fh:
        w, h, num, den, n = read_container_header(fh)
        payload = fh.read(n * w * h)
        if len(payload) < n * w * h:
            raise VideoFormatError("truncated payload")
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w)
    return RawVideo(width=w, height=h, fps_num=num, fps_den=den, frames=frames)


# --------------------------------------------------------------------------
# PGM / PPM frame directories
# --------------------------------------------------------------------------

def _load_frame_dir(path: Path) -> RawVideo:
    names = sorted(
        p for p in path.iterdir() if p.suffix.lower() in (".pgm", ".ppm")
    )
    if not names:
        raise VideoFormatError(f"no PGM/PPM frames in {path}")
    frames = [read_pnm(p) for p in names]
    h, w = frames[0].shape
    for name, frame in zip(names, frames):
        if frame.shape != (h, w):
            raise VideoFormatError(
                f"{name.name}: frame is {frame.shape}, expected {(h, w)}"
            )
    # Frame directories do not carry timing; callers needing real timing
    # should use the container format.  Default to 1 fps.
    return RawVideo(
        width=w, height=h, fps_num=1, fps_den=1, frames=np.stack(frames)
    )


def _read_pnm_token(fh) -> bytes:
    """Next whitespace-delimited header token, skipping '#' comments."""
    tok = b""
    while True:
        c = fh.read(1)
        if not c:
            raise VideoFormatError("unexpected end of header")
        if c == b"#":
            while c not in (b"\n", b""):
                c = fh.read(1)
            continue
        if c.isspace():
            if tok:
                return tok
            continue
        tok += c


def read_pnm(path: str | Path) -> np.ndarray:
    """Read a binary PGM (P5) or PPM (P6, reduced to luminance) image."""
    with open(path, "rb") as fh:
        magic = fh.read(2)
        if magic not in (b"P5", b"P6"):
            raise VideoFormatError(f"{path}: unsupported magic {magic!r}")
        w = int(_read_pnm_token(fh))
        h = int(_read_pnm_token(fh))
        maxval = int(_read_pnm_token(fh))
        if maxval != 255:
            raise VideoFormatError(f"{path}: only maxval 255 supported")
        channels = 1 if magic == b"P5" else 3
        raster = fh.read(w * h * channels)
    if len(raster) < w * h * channels:
        raise VideoFormatError(f"{path}: truncated raster")
    data = np.frombuffer(raster, dtype=np.uint8)
    if channels == 1:
        return data.reshape(h, w)
    return rgb_to_luminance(data.reshape(h, w, 3))


def write_pgm(array: np.ndarray, path: str | Path) -> None:
    """Write a (h, w) uint8 array as binary PGM."""
    a = np.asarray(array)
    if a.ndim != 2 or a.dtype != np.uint8:
        raise ValueError("expected a 2-D uint8 array")
    h, w = a.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(a.tobytes())
