"""Synthetic class-conditioned videos for desk-scale experiments.

A bright Gaussian blob walks over a static mid-gray background with
per-class kinematics (speed, pauses, local jitter).  An optional distractor
adds periodic luminance modulation to a fixed region, standing in for
background motion that the spatial mask should learn to ignore.  Everything
is driven by a seeded generator, so identical seeds give bit-identical
videos.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from .labels import DatasetManifest, ManifestRow, all_labels
from .video import RawVideo, save_video

BACKGROUND_LEVEL = 110
BLOB_PEAK = 120.0


@dataclass(frozen=True)
class DistractorSpec:
    """Pixel box [row0:row1, col0:col1] flickering as amplitude*sin(2*pi*t/period)."""

    row0: int
    col0: int
    row1: int
    col1: int
    amplitude: float
    period_frames: float

    def __post_init__(self) -> None:
        if self.row1 <= self.row0 or self.col1 <= self.col0:
            raise ValueError("empty distractor region")
        if self.period_frames <= 0:
            raise ValueError("period must be positive")


@dataclass(frozen=True)
class SynthClassSpec:
    class_name: str
    speed_mean: float
    speed_std: float
    pause_prob: float
    jitter_amp: float
    blob_radius: int
    distractor: DistractorSpec | None = None

    def __post_init__(self) -> None:
        if self.speed_mean < 0 or self.speed_std < 0:
            raise ValueError("speeds must be >= 0")
        if not 0.0 <= self.pause_prob <= 1.0:
            raise ValueError("pause_prob must be in [0, 1]")
        if self.blob_radius < 1:
            raise ValueError("blob_radius must be >= 1")


def default_class_specs() -> list[SynthClassSpec]:
    """Three separable desk-scale behavior regimes."""
    return [
        SynthClassSpec("no_pain", speed_mean=2.5, speed_std=0.8,
                       pause_prob=0.05, jitter_amp=0.4, blob_radius=6),
        SynthClassSpec("inflammatory", speed_mean=0.8, speed_std=0.4,
                       pause_prob=0.35, jitter_amp=3.0, blob_radius=6),
        SynthClassSpec("neuropathic", speed_mean=0.3, speed_std=0.15,
                       pause_prob=0.75, jitter_amp=0.3, blob_radius=6),
    ]


def fifteen_class_specs() -> list[SynthClassSpec]:
    """One spec per taxonomy class, kinematics spread over a parameter grid."""
    specs = []
    for i, label in enumerate(all_labels()):
        name = "D0" if label.timepoint == "D0" else (
            f"{label.condition}-{label.timepoint}"
        )
        specs.append(
            SynthClassSpec(
                class_name=name,
                speed_mean=0.3 + 0.25 * (i % 5),
                speed_std=0.1 + 0.05 * (i % 3),
                pause_prob=0.05 + 0.06 * (i % 8),
                jitter_amp=0.2 + 0.5 * (i % 4),
                blob_radius=6,
            )
        )
    return specs


def generate_video(
    spec: SynthClassSpec,
    duration: float,
    fps_num: int,
    fps_den: int,
    width: int,
    height: int,
    seed: int,
) -> RawVideo:
    """Seeded random-walk blob video; reflective bounds keep the blob inside."""
    n_frames = int(Fraction(duration) * fps_num / fps_den)
    if n_frames < 1:
        raise ValueError("duration too short for one frame")
    sigma = spec.blob_radius / 2.0
    margin = 3.0 * sigma
    if 2 * margin >= min(width, height):
        raise ValueError(
            f"blob radius {spec.blob_radius} does not fit a "
            f"{width}x{height} frame"
        )
    rng = np.random.default_rng(seed)
    cx = rng.uniform(margin, width - 1 - margin)
    cy = rng.uniform(margin, height - 1 - margin)
    heading = rng.uniform(0, 2 * np.pi)
    phase = rng.uniform(0, 2 * np.pi)

    base = np.full((height, width), BACKGROUND_LEVEL, dtype=np.float64)
    half = int(np.ceil(3 * sigma))
    frames = np.empty((n_frames, height, width), dtype=np.uint8)
    for t in range(n_frames):
        if rng.random() >= spec.pause_prob:
            heading += rng.normal(0.0, 0.4)
            step = max(0.0, rng.normal(spec.speed_mean, spec.speed_std))
            cx += step * np.cos(heading)
            cy += step * np.sin(heading)
            cx, heading = _reflect(cx, heading, margin, width - 1 - margin, "x")
            cy, heading = _reflect(cy, heading, margin, height - 1 - margin, "y")
        jx = cx + spec.jitter_amp * rng.uniform(-1.0, 1.0)
        jy = cy + spec.jitter_amp * rng.uniform(-1.0, 1.0)

        frame = base.copy()
        if spec.distractor is not None:
            d = spec.distractor
            frame[d.row0 : d.row1, d.col0 : d.col1] += d.amplitude * np.sin(
                2 * np.pi * t / d.period_frames + phase
            )
        _render_blob(frame, jx, jy, sigma, half)
        frames[t] = np.clip(np.floor(frame + 0.5), 0, 255).astype(np.uint8)
    return RawVideo(
        width=width, height=height, fps_num=fps_num, fps_den=fps_den,
        frames=frames,
    )


def _reflect(pos: float, heading: float, lo: float, hi: float, axis: str):
    """Bounce position back into [lo, hi], flipping the heading component."""
    bounced = False
    while pos < lo or pos > hi:
        if pos < lo:
            pos = 2 * lo - pos
        else:
            pos = 2 * hi - pos
        bounced = True
    if bounced:
        heading = np.pi - heading if axis == "x" else -heading
    return pos, heading


def _render_blob(
    frame: np.ndarray, cx: float, cy: float, sigma: float, half: int
) -> None:
    h, w = frame.shape
    x0 = max(0, int(np.floor(cx)) - half)
    x1 = min(w, int(np.floor(cx)) + half + 1)
    y0 = max(0, int(np.floor(cy)) - half)
    y1 = min(h, int(np.floor(cy)) + half + 1)
    ys = np.arange(y0, y1)[:, None]
    xs = np.arange(x0, x1)[None, :]
    frame[y0:y1, x0:x1] += BLOB_PEAK * np.exp(
        -((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma * sigma)
    )


# fixed label mapping for synthetic manifests
_THREE_CLASS_LABELS = {
    "no_pain": ("control", "D3"),
    "inflammatory": ("formalin", "D3"),
    "neuropathic": ("sni", "D3"),
}

DEFAULT_DISTRACTOR_REGION = (0.0, 6.0 / 7.0, 1.0 / 7.0, 1.0)  # cell (0, 6)


def generate_dataset(
    specs: list[SynthClassSpec],
    videos_per_class: int,
    out_dir: str | Path,
    duration: float = 30.0,
    fps_num: int = 20,
    fps_den: int = 1,
    width: int = 112,
    height: int = 112,
    seed: int = 0,
    distractors: bool = False,
) -> DatasetManifest:
    """Write MPVR videos and a manifest for the given class specs.

    Labels: 3 specs map to (control|formalin|sni, D3) by spec name when the
    names match the defaults, otherwise specs map to taxonomy classes in
    class-id order (so 15 specs emit exactly the 15 valid labels).  With
    distractors enabled, every video gets a flicker patch in grid cell
    (0, 6) whose amplitude, period and phase are drawn per video, making it
    class-uncorrelated background motion.
    """
    if len(specs) < 2:
        raise ValueError("need at least 2 class specs")
    if len(specs) > 15:
        raise ValueError("at most 15 classes in the taxonomy")
    labels = _map_specs_to_labels(specs)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    r0 = int(DEFAULT_DISTRACTOR_REGION[0] * height)
    c0 = int(DEFAULT_DISTRACTOR_REGION[1] * width)
    r1 = int(DEFAULT_DISTRACTOR_REGION[2] * height)
    c1 = int(DEFAULT_DISTRACTOR_REGION[3] * width)

    rows = []
    for ci, (spec, (condition, timepoint)) in enumerate(zip(specs, labels)):
        for vi in range(videos_per_class):
            video_seed = int(rng.integers(0, 2**63))
            vspec = spec
            if distractors:
                vspec = replace(
                    spec,
                    distractor=DistractorSpec(
                        row0=r0, col0=c0, row1=r1, col1=c1,
                        amplitude=float(rng.uniform(15.0, 45.0)),
                        period_frames=float(rng.uniform(4.0, 30.0)),
                    ),
                )
            video = generate_video(
                vspec, duration, fps_num, fps_den, width, height, video_seed
            )
            name = f"{spec.class_name}_{vi:03d}.mpvr"
            save_video(video, out_dir / name)
            rows.append(
                ManifestRow(
                    video_path=str(out_dir / name),
                    condition=condition,
                    timepoint=timepoint,
                    mouse_id="",
                    fps_num=fps_num,
                    fps_den=fps_den,
                )
            )
    manifest = DatasetManifest(rows=rows)
    manifest.save(out_dir / "manifest.csv")
    return manifest


def _map_specs_to_labels(specs: list[SynthClassSpec]) -> list[tuple[str, str]]:
    names = [s.class_name for s in specs]
    if len(specs) == 3 and set(names) == set(_THREE_CLASS_LABELS):
        return [_THREE_CLASS_LABELS[n] for n in names]
    return [
        (lab.condition, lab.timepoint) for lab in all_labels()[: len(specs)]
    ]


def load_class_specs(path: str | Path) -> list[SynthClassSpec]:
    """Read class specs from a JSON list mirroring SynthClassSpec fields."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    specs = []
    for rec in raw:
        distractor = rec.pop("distractor", None)
        specs.append(
            SynthClassSpec(
                **rec,
                distractor=DistractorSpec(**distractor) if distractor else None,
            )
        )
    return specs
