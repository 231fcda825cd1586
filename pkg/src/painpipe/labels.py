"""Pain-condition class taxonomy and dataset manifest.

The 15-class taxonomy pairs a condition {control, formalin, sni} with a
recording timepoint.  D0 recordings are the shared healthy baseline and
form a single class regardless of which condition the animal was later
assigned to.  Class ids:

     0  D0 (shared baseline)
     1-6   formalin x {1min, 2h, D3, D5, D7, D14}
     7-10  sni x {D3, D7, D14, D21}
    11-14  control x {D3, D7, D14, D21}

The 3-class collapse maps formalin -> inflammatory, sni -> neuropathic,
control and every D0 -> no_pain.

Manifest CSV header: video_path,condition,timepoint,mouse_id,fps_num,fps_den
with optional trailing columns fold and cohort.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

CONDITIONS = ("control", "formalin", "sni")
TIMEPOINTS = ("D0", "1min", "2h", "D3", "D5", "D7", "D14", "D21")

# nominal day of each timepoint, for phase bucketing
TIMEPOINT_DAYS = {
    "D0": 0.0,
    "1min": 1.0 / (24 * 60),
    "2h": 2.0 / 24,
    "D3": 3.0,
    "D5": 5.0,
    "D7": 7.0,
    "D14": 14.0,
    "D21": 21.0,
}

_CONDITION_TIMEPOINTS = {
    "formalin": ("1min", "2h", "D3", "D5", "D7", "D14"),
    "sni": ("D3", "D7", "D14", "D21"),
    "control": ("D3", "D7", "D14", "D21"),
}

# ordered per-condition timeline used for ordinal (QWK) encoding
CONDITION_TIMELINES = {
    cond: ("D0",) + tps for cond, tps in _CONDITION_TIMEPOINTS.items()
}

N_CLASSES = 15
NO_PAIN, INFLAMMATORY, NEUROPATHIC = 0, 1, 2
COLLAPSED_NAMES = ("no_pain", "inflammatory", "neuropathic")


@dataclass(frozen=True)
class PainLabel:
    condition: str
    timepoint: str

    def __post_init__(self) -> None:
        if self.condition not in CONDITIONS:
            raise ValueError(f"unknown condition {self.condition!r}")
        if self.timepoint not in TIMEPOINTS:
            raise ValueError(f"unknown timepoint {self.timepoint!r}")
        if (
            self.timepoint != "D0"
            and self.timepoint not in _CONDITION_TIMEPOINTS[self.condition]
        ):
            raise ValueError(
                f"({self.condition}, {self.timepoint}) is not a valid label"
            )

    @property
    def class_id(self) -> int:
        if self.timepoint == "D0":
            return 0
        offset = 1
        for cond in ("formalin", "sni", "control"):
            tps = _CONDITION_TIMEPOINTS[cond]
            if self.condition == cond:
                return offset + tps.index(self.timepoint)
            offset += len(tps)
        raise AssertionError("unreachable")


def all_labels() -> list[PainLabel]:
    """The 15 canonical labels in class-id order (D0 shown as control)."""
    labels = [PainLabel("control", "D0")]
    for cond in ("formalin", "sni", "control"):
        labels += [PainLabel(cond, tp) for tp in _CONDITION_TIMEPOINTS[cond]]
    return labels


CLASS_NAMES = tuple(
    "D0" if lab.timepoint == "D0" else f"{lab.condition}-{lab.timepoint}"
    for lab in all_labels()
)


def collapse_to_3(label: PainLabel) -> int:
    """no_pain / inflammatory / neuropathic collapse (D0 is always no_pain)."""
    if label.timepoint == "D0" or label.condition == "control":
        return NO_PAIN
    if label.condition == "formalin":
        return INFLAMMATORY
    return NEUROPATHIC


def collapse_class_id(class_id: int) -> int:
    return collapse_to_3(all_labels()[class_id])


@dataclass
class ManifestRow:
    video_path: str
    condition: str
    timepoint: str
    mouse_id: str = ""
    fps_num: int = 20
    fps_den: int = 1
    fold: int | None = None
    cohort: str = ""

    @property
    def label(self) -> PainLabel:
        return PainLabel(self.condition, self.timepoint)


@dataclass
class DatasetManifest:
    rows: list[ManifestRow]

    def __post_init__(self) -> None:
        paths = [r.video_path for r in self.rows]
        if len(set(paths)) != len(paths):
            raise ValueError("duplicate video paths in manifest")
        for r in self.rows:
            r.label  # validates the (condition, timepoint) pair
            if r.fps_num < 1 or r.fps_den < 1:
                raise ValueError(f"{r.video_path}: invalid fps")

    def __len__(self) -> int:
        return len(self.rows)

    def save(self, path: str | Path) -> None:
        has_fold = any(r.fold is not None for r in self.rows)
        has_cohort = any(r.cohort for r in self.rows)
        header = ["video_path", "condition", "timepoint", "mouse_id",
                  "fps_num", "fps_den"]
        if has_fold:
            header.append("fold")
        if has_cohort:
            header.append("cohort")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for r in self.rows:
                row = [r.video_path, r.condition, r.timepoint, r.mouse_id,
                       r.fps_num, r.fps_den]
                if has_fold:
                    row.append("" if r.fold is None else r.fold)
                if has_cohort:
                    row.append(r.cohort)
                writer.writerow(row)


def load_manifest(path: str | Path) -> DatasetManifest:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"video_path", "condition", "timepoint", "mouse_id",
                    "fps_num", "fps_den"}
        missing = required - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: manifest missing columns {sorted(missing)}")
        rows = []
        for rec in reader:
            fold = rec.get("fold", "")
            rows.append(
                ManifestRow(
                    video_path=rec["video_path"],
                    condition=rec["condition"],
                    timepoint=rec["timepoint"],
                    mouse_id=rec.get("mouse_id", "") or "",
                    fps_num=int(rec["fps_num"]),
                    fps_den=int(rec["fps_den"]),
                    fold=int(fold) if fold not in (None, "") else None,
                    cohort=rec.get("cohort", "") or "",
                )
            )
    return DatasetManifest(rows=rows)
