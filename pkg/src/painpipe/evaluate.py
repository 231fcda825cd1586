"""Cross-validation protocol and evaluation metrics.

Folds are stratified per class (round-robin deal after a seeded shuffle);
when mouse ids are present all videos of a mouse stay in one fold.  Each
cross-validation round tests on fold i, validates on fold (i+1) mod k and
trains on the remaining folds; test predictions are pooled across rounds
before computing overall metrics.
"""

from __future__ import annotations

import warnings
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .labels import (
    CONDITION_TIMELINES,
    TIMEPOINT_DAYS,
    DatasetManifest,
)
from .ssm import ModelConfig, SsmCheckpoint, TrainConfig, predict
from .ssm import train as train_model

# --------------------------------------------------------------------------
# folds
# --------------------------------------------------------------------------

def make_folds(
    manifest: DatasetManifest,
    k: int = 8,
    seed: int = 0,
    group_by_mouse: bool | None = None,
) -> list[list[int]]:
    """Partition manifest row indices into k folds.

    Ungrouped: per class, a seeded shuffle then a round-robin deal, so
    per-class fold sizes differ by at most one.  Grouped (default whenever
    any mouse_id is set): mice are assigned whole to the currently smallest
    fold, largest mice first.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    rows = manifest.rows
    if group_by_mouse is None:
        group_by_mouse = any(r.mouse_id for r in rows)

    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]

    if group_by_mouse:
        by_mouse: dict[str, list[int]] = defaultdict(list)
        for i, r in enumerate(rows):
            by_mouse[r.mouse_id or f"__solo_{i}"].append(i)
        mice = sorted(by_mouse)
        order = rng.permutation(len(mice))
        # largest groups first, seeded shuffle breaking size ties
        ranked = sorted(
            range(len(mice)), key=lambda j: (-len(by_mouse[mice[j]]), order[j])
        )
        for j in ranked:
            target = min(range(k), key=lambda f: (len(folds[f]), f))
            folds[target].extend(by_mouse[mice[j]])
        for f in folds:
            f.sort()
        return folds

    by_class: dict[int, list[int]] = defaultdict(list)
    for i, r in enumerate(rows):
        by_class[r.label.class_id].append(i)
    for cls in sorted(by_class):
        idxs = np.array(by_class[cls])
        if len(idxs) < k:
            warnings.warn(
                f"class {cls} has only {len(idxs)} videos for {k} folds",
                stacklevel=2,
            )
        idxs = idxs[rng.permutation(len(idxs))]
        for j, idx in enumerate(idxs):
            folds[j % k].append(int(idx))
    for f in folds:
        f.sort()
    return folds


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def _as_labels(preds, truths) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(preds, dtype=np.int64)
    t = np.asarray(truths, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError("preds and truths must be 1-D and equally long")
    if p.size == 0:
        raise ValueError("empty label vectors")
    return p, t


def micro_accuracy(preds, truths) -> float:
    p, t = _as_labels(preds, truths)
    return float((p == t).mean())


def macro_f1(preds, truths, k: int) -> float:
    """Unweighted mean per-class F1; a class absent from both preds and
    truths is skipped, one with no true positives scores 0."""
    p, t = _as_labels(preds, truths)
    if ((p < 0) | (p >= k) | (t < 0) | (t >= k)).any():
        raise ValueError(f"labels outside [0, {k})")
    scores = []
    for cls in range(k):
        tp = int(((p == cls) & (t == cls)).sum())
        fp = int(((p == cls) & (t != cls)).sum())
        fn = int(((p != cls) & (t == cls)).sum())
        if tp == 0 and fp == 0 and fn == 0:
            continue
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores)) if scores else 0.0


def confusion_counts(preds, truths, k: int) -> np.ndarray:
    p, t = _as_labels(preds, truths)
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (t, p), 1)
    return counts


def normalized_confusion(preds, truths, k: int) -> np.ndarray:
    """Row-normalized confusion matrix; all-zero true-class rows stay zero."""
    counts = confusion_counts(preds, truths, k).astype(np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    return np.divide(counts, sums, out=np.zeros_like(counts), where=sums > 0)


def qwk(preds, truths, k: int) -> float:
    """Quadratic weighted kappa over ordinal labels in [0, k)."""
    if k < 2:
        raise ValueError("qwk needs k >= 2")
    observed = confusion_counts(preds, truths, k).astype(np.float64)
    n = observed.sum()
    idx = np.arange(k)
    weights = (idx[:, None] - idx[None, :]) ** 2 / (k - 1) ** 2
    hist_true = observed.sum(axis=1)
    hist_pred = observed.sum(axis=0)
    expected = np.outer(hist_true, hist_pred) / n
    num = float((weights * observed).sum())
    den = float((weights * expected).sum())
    if den == 0.0:
        return 1.0  # both distributions concentrated on the diagonal
    return 1.0 - num / den


# --------------------------------------------------------------------------
# cross-validation
# --------------------------------------------------------------------------

@dataclass
class FoldResult:
    fold: int
    video_ids: list[str]
    truths: np.ndarray
    preds: np.ndarray
    checkpoint: SsmCheckpoint


@dataclass
class CrossvalResult:
    fold_results: list[FoldResult]
    pooled_ids: list[str] = field(init=False)
    pooled_truths: np.ndarray = field(init=False)
    pooled_preds: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.pooled_ids = [v for fr in self.fold_results for v in fr.video_ids]
        self.pooled_truths = np.concatenate(
            [fr.truths for fr in self.fold_results]
        )
        self.pooled_preds = np.concatenate(
            [fr.preds for fr in self.fold_results]
        )

    def micro_accuracy(self) -> float:
        return micro_accuracy(self.pooled_preds, self.pooled_truths)

    def macro_f1(self, k: int) -> float:
        return macro_f1(self.pooled_preds, self.pooled_truths, k)


def run_crossval(
    samples: dict[str, tuple[np.ndarray, int]],
    folds: list[list[str]],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    log_dir=None,
) -> CrossvalResult:
    """k rounds of train/validate/test with rotating fold roles.

    samples maps video id -> (clip-feature sequence, class id); folds hold
    video ids.  Fold i is the test set of round i, fold (i+1) mod k the
    validation set, everything else trains.  Per-round seeds derive from
    train_cfg.seed so the whole protocol is reproducible.
    """
    k = len(folds)
    if k < 3:
        raise ValueError("need at least 3 folds for train/val/test rotation")
    listed = [v for fold in folds for v in fold]
    if set(listed) - set(samples):
        raise ValueError("folds reference unknown video ids")

    results = []
    for i in range(k):
        test_ids = folds[i]
        val_ids = folds[(i + 1) % k]
        train_ids = [
            v for j, fold in enumerate(folds) if j not in (i, (i + 1) % k)
            for v in fold
        ]
        fold_seed = int(
            np.random.SeedSequence((train_cfg.seed, i)).generate_state(1)[0]
        )
        fold_cfg = TrainConfig(
            lr=train_cfg.lr,
            weight_decay=train_cfg.weight_decay,
            batch_size=train_cfg.batch_size,
            max_epochs=train_cfg.max_epochs,
            plateau_patience=train_cfg.plateau_patience,
            lr_factor=train_cfg.lr_factor,
            seed=fold_seed,
        )
        log_path = None
        if log_dir is not None:
            log_path = f"{log_dir}/train_fold{i}.csv"
        ckpt = train_model(
            model_cfg,
            [samples[v] for v in train_ids],
            [samples[v] for v in val_ids],
            fold_cfg,
            log_path=log_path,
        )
        preds = np.array(
            [predict(ckpt, samples[v][0])[0] for v in test_ids], dtype=np.int64
        )
        truths = np.array([samples[v][1] for v in test_ids], dtype=np.int64)
        results.append(
            FoldResult(
                fold=i,
                video_ids=list(test_ids),
                truths=truths,
                preds=preds,
                checkpoint=ckpt,
            )
        )
    return CrossvalResult(fold_results=results)


# --------------------------------------------------------------------------
# phase-bucketed QWK
# --------------------------------------------------------------------------

PHASE_BUCKETS = (
    ("acute_D0_D3", 0.0, 3.0),
    ("D3_D7", 3.0, 7.0),
    ("chronic_D7_D21", 7.0, 21.0),
)
PHASE_COLUMNS = tuple(name for name, _, _ in PHASE_BUCKETS) + ("overall",)
PHASE_ROWS = ("formalin", "sni", "control", "total")


@dataclass
class MouseSeries:
    """One mouse's timeline: true and predicted ordinal index per timepoint."""

    mouse_id: str
    condition: str
    timepoints: list[str]
    true_ord: list[int]
    pred_ord: list[int]


def ordinal_rank(condition: str, timepoint: str) -> int:
    """Rank of a timepoint within the condition's own timeline."""
    return CONDITION_TIMELINES[condition].index(timepoint)


def nearest_ordinal(condition: str, timepoint: str) -> int:
    """Ordinal of the timeline entry nearest in days (earlier wins ties)."""
    timeline = CONDITION_TIMELINES[condition]
    day = TIMEPOINT_DAYS[timepoint]
    dists = [abs(TIMEPOINT_DAYS[tp] - day) for tp in timeline]
    return int(np.argmin(dists))


def qwk_by_phase(series: list[MouseSeries]) -> dict[str, dict[str, float | None]]:
    """Table of mean per-mouse QWK by condition row and phase column.

    A cell is None when no mouse of that condition has a pair inside the
    bucket.  The 'total' row averages over all mice regardless of condition.
    """
    table: dict[str, dict[str, float | None]] = {}
    by_row: dict[str, list[MouseSeries]] = {
        "formalin": [], "sni": [], "control": []
    }
    for s in series:
        by_row[s.condition].append(s)
    for row in PHASE_ROWS:
        members = series if row == "total" else by_row[row]
        table[row] = {}
        for col in PHASE_COLUMNS:
            values = []
            for s in members:
                k = len(CONDITION_TIMELINES[s.condition])
                if col == "overall":
                    pairs = list(zip(s.true_ord, s.pred_ord))
                else:
                    lo, hi = next(
                        (b_lo, b_hi)
                        for name, b_lo, b_hi in PHASE_BUCKETS
                        if name == col
                    )
                    pairs = [
                        (t, p)
                        for tp, t, p in zip(s.timepoints, s.true_ord, s.pred_ord)
                        if lo <= TIMEPOINT_DAYS[tp] <= hi
                    ]
                if pairs:
                    truths = [t for t, _ in pairs]
                    preds = [p for _, p in pairs]
                    values.append(qwk(preds, truths, k))
            table[row][col] = float(np.mean(values)) if values else None
    return table


# --------------------------------------------------------------------------
# drug-cohort report
# --------------------------------------------------------------------------

COHORT_COLUMNS = ("formalin_pct", "control_pct", "sni_pct")
_COLLAPSED_TO_COLUMN = {1: 0, 0: 1, 2: 2}  # inflammatory, no_pain, neuropathic


def cohort_report(
    window_preds: dict[str, list[int]],
) -> list[tuple[str, float, float, float]]:
    """Percentage of 3-class window predictions per cohort.

    Columns follow the report layout: inflammatory (formalin), no-pain
    (control), neuropathic (SNI); each row sums to 100.
    """
    rows = []
    for cohort, preds in window_preds.items():
        if not preds:
            raise ValueError(f"cohort {cohort!r} has no window predictions")
        counts = [0, 0, 0]
        for p in preds:
            if p not in _COLLAPSED_TO_COLUMN:
                raise ValueError(f"prediction {p} is not a 3-class label")
            counts[_COLLAPSED_TO_COLUMN[p]] += 1
        total = len(preds)
        rows.append(
            (cohort, *(100.0 * c / total for c in counts))
        )
    return rows


# --------------------------------------------------------------------------
# report rendering
# --------------------------------------------------------------------------

def render_confusion_svg(
    matrix: np.ndarray, class_names: tuple[str, ...] | list[str]
) -> str:
    """Render a row-normalized confusion matrix as an SVG heatmap.

    Cell (r, c) holds the fraction of true class r predicted as class c;
    fill interpolates linearly from white (0.0) to dark blue rgb(8,48,107)
    (1.0), rows top to bottom, columns left to right.
    """
    m = np.asarray(matrix, dtype=np.float64)
    k = m.shape[0]
    cell = 42
    margin = 110
    size_w = margin + k * cell + 10
    size_h = margin + k * cell + 10
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size_w}" '
        f'height="{size_h}" font-family="monospace" font-size="10">',
        "<!-- row = true class (top to bottom), col = predicted class "
        "(left to right); fill: white at 0.0 to rgb(8,48,107) at 1.0 -->",
    ]
    for r in range(k):
        for c in range(k):
            v = min(max(float(m[r, c]), 0.0), 1.0)
            red = round(255 + (8 - 255) * v)
            green = round(255 + (48 - 255) * v)
            blue = round(255 + (107 - 255) * v)
            x = margin + c * cell
            y = margin + r * cell
            out.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="rgb({red},{green},{blue})" stroke="#999"/>'
            )
            if v > 0:
                text_fill = "#fff" if v > 0.5 else "#000"
                out.append(
                    f'<text x="{x + cell / 2:.0f}" y="{y + cell / 2 + 3:.0f}" '
                    f'text-anchor="middle" fill="{text_fill}">{v:.2f}</text>'
                )
    for i, name in enumerate(class_names):
        x = margin + i * cell + cell / 2
        out.append(
            f'<text x="{x:.0f}" y="{margin - 6}" text-anchor="start" '
            f'transform="rotate(-60 {x:.0f} {margin - 6})">{name}</text>'
        )
        y = margin + i * cell + cell / 2 + 3
        out.append(
            f'<text x="{margin - 6}" y="{y:.0f}" text-anchor="end">{name}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
