"""Run orchestration shared by the CLI: preprocess, featurize, sequences.

Work directory layout::

    workdir/
      bg/<video_id>.pgm          temporal-median backgrounds
      fg/<video_id>.mpvr         foreground difference videos
      feat/<video_id>/clip_0000.mpfg ...
      mask_windows.csv           selected window per (video, clip), mask runs
      preprocess_state.json      content hashes for idempotent reruns
      features_meta.json         pipeline tags the training stage must match

Every run-level artifact embeds (config_hash, seed, version) so reruns with
the same configuration are byte-identical.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .background import compute_background, extract_foreground
from .features import (
    ClipSpec,
    extract_motion_energy,
    load_feature_grid,
    save_feature_grid,
    segment_clips,
)
from .labels import DatasetManifest, ManifestRow, collapse_to_3
from .mask import MaskWindow, mask_pipeline
from .ssm import pool_feature_grid
from .video import load_video, save_video, write_pgm


class PipelineMismatchError(RuntimeError):
    """Featurization tags do not match the requested run configuration."""


def video_id(index: int, row: ManifestRow) -> str:
    return f"{index:04d}_{Path(row.video_path).stem}"


def config_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _file_hash(path: Path, extra: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(extra, sort_keys=True).encode("utf-8"))
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class PreprocessResult:
    processed: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    failed: dict[str, str] = field(default_factory=dict)


def preprocess(
    manifest: DatasetManifest,
    workdir: str | Path,
    threshold: int = 0,
) -> PreprocessResult:
    """Background PGM + foreground MPVR per video; skips up-to-date outputs.

    A video is up to date when the content hash of its input (plus the
    threshold) matches the recorded hash and both outputs exist.  Failures
    are isolated per file and reported, not raised.
    """
    workdir = Path(workdir)
    (workdir / "bg").mkdir(parents=True, exist_ok=True)
    (workdir / "fg").mkdir(parents=True, exist_ok=True)
    state_path = workdir / "preprocess_state.json"
    state = {}
    if state_path.exists():
        state = json.loads(state_path.read_text(encoding="utf-8"))

    result = PreprocessResult()
    for i, row in enumerate(manifest.rows):
        vid = video_id(i, row)
        bg_path = workdir / "bg" / f"{vid}.pgm"
        fg_path = workdir / "fg" / f"{vid}.mpvr"
        try:
            digest = _file_hash(Path(row.video_path), {"threshold": threshold})
            if (
                state.get(vid) == digest
                and bg_path.exists()
                and fg_path.exists()
            ):
                result.skipped.append(vid)
                continue
            video = load_video(row.video_path)
            bg = compute_background(video)
            fg = extract_foreground(video, bg, threshold)
            write_pgm(bg.median_frame, bg_path)
            save_video(fg, fg_path)
            state[vid] = digest
            result.processed.append(vid)
        except (ValueError, OSError) as exc:
            result.failed[vid] = str(exc)
    state_path.write_text(
        json.dumps(state, sort_keys=True, indent=1), encoding="utf-8"
    )
    return result


def featurize(
    manifest: DatasetManifest,
    workdir: str | Path,
    clip_spec: ClipSpec,
    t_bins: int,
    use_mask: bool,
    seed: int = 0,
    extra_config: dict | None = None,
) -> None:
    """Per-clip MPFG files (masked when requested) plus the mask window log."""
    workdir = Path(workdir)
    feat_root = workdir / "feat"
    feat_root.mkdir(parents=True, exist_ok=True)

    mask_rows = []
    for i, row in enumerate(manifest.rows):
        vid = video_id(i, row)
        fg_path = workdir / "fg" / f"{vid}.mpvr"
        if not fg_path.exists():
            raise FileNotFoundError(
                f"missing foreground {fg_path}; run preprocess first"
            )
        video = load_video(fg_path)
        clips = [
            extract_motion_energy(clip, t_bins)
            for clip in segment_clips(video, clip_spec)
        ]
        out_dir = feat_root / vid
        out_dir.mkdir(exist_ok=True)
        for j, grid in enumerate(clips):
            if use_mask:
                grid, window = mask_pipeline(grid)
                mask_rows.append((vid, j, window.row, window.col))
            save_feature_grid(grid, out_dir / f"clip_{j:04d}.mpfg")

    meta = {
        "mask": use_mask,
        "t_bins": t_bins,
        "clip_seconds": clip_spec.clip_seconds,
        "seed": seed,
        "version": __version__,
    }
    meta["config_hash"] = config_hash({**meta, **(extra_config or {})})
    (workdir / "features_meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=1), encoding="utf-8"
    )
    if use_mask:
        lines = ["video_id,clip_index,row,col"]
        lines += [f"{v},{j},{r},{c}" for v, j, r, c in mask_rows]
        (workdir / "mask_windows.csv").write_text(
            "\n".join(lines) + "\n", encoding="ascii"
        )
    elif (workdir / "mask_windows.csv").exists():
        (workdir / "mask_windows.csv").unlink()


def load_features_meta(workdir: str | Path) -> dict:
    path = Path(workdir) / "features_meta.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} missing; run featurize first")
    return json.loads(path.read_text(encoding="utf-8"))


def _load_mask_windows(workdir: Path) -> dict[tuple[str, int], MaskWindow]:
    windows = {}
    path = workdir / "mask_windows.csv"
    for line in path.read_text(encoding="ascii").splitlines()[1:]:
        vid, j, r, c = line.split(",")
        windows[(vid, int(j))] = MaskWindow(row=int(r), col=int(c))
    return windows


def build_sequences(
    manifest: DatasetManifest,
    workdir: str | Path,
    use_mask: bool,
    class_mode: str,
) -> dict[str, tuple[np.ndarray, int]]:
    """video id -> (pooled clip-feature sequence (L, D), class id).

    Masked runs pool each clip over its selected 3x3 window; unmasked runs
    pool over all 49 cells.  class_mode '3' collapses the taxonomy; '15'
    and 'collapse' keep the full class ids.
    """
    workdir = Path(workdir)
    meta = load_features_meta(workdir)
    if bool(meta["mask"]) != use_mask:
        raise PipelineMismatchError(
            f"features were computed with mask={meta['mask']}, run wants "
            f"mask={use_mask}"
        )
    windows = _load_mask_windows(workdir) if use_mask else {}

    samples: dict[str, tuple[np.ndarray, int]] = {}
    for i, row in enumerate(manifest.rows):
        vid = video_id(i, row)
        clip_dir = workdir / "feat" / vid
        clip_paths = sorted(clip_dir.glob("clip_*.mpfg"))
        if not clip_paths:
            raise FileNotFoundError(f"no feature grids under {clip_dir}")
        pooled = []
        for j, path in enumerate(clip_paths):
            grid = load_feature_grid(path)
            window = windows.get((vid, j)) if use_mask else None
            pooled.append(pool_feature_grid(grid, window))
        label = row.label
        target = collapse_to_3(label) if class_mode == "3" else label.class_id
        samples[vid] = (np.stack(pooled), target)
    return samples


def write_csv_report(
    path: str | Path,
    header: list[str],
    rows: list[list],
    run_tags: dict,
) -> None:
    """CSV with a deterministic provenance comment line."""
    lines = [
        "# "
        + ",".join(f"{k}={run_tags[k]}" for k in sorted(run_tags)),
        ",".join(header),
    ]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)
