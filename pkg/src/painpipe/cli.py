"""Command-line surface for the full pipeline.

Subcommands: synth, preprocess, featurize, train, crossval, cohort, report.
Configuration comes from an optional JSON file (--config) whose keys mirror
RunConfig; explicit command-line flags override file values.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import (
    CrossvalResult,
    MouseSeries,
    PHASE_COLUMNS,
    PHASE_ROWS,
    cohort_report,
    macro_f1,
    micro_accuracy,
    nearest_ordinal,
    normalized_confusion,
    ordinal_rank,
    make_folds,
    qwk_by_phase,
    render_confusion_svg,
    run_crossval,
)
from .features import ClipSpec
from .labels import (
    CLASS_NAMES,
    COLLAPSED_NAMES,
    DatasetManifest,
    all_labels,
    collapse_class_id,
    load_manifest,
)
from .pipeline import (
    PipelineMismatchError,
    build_sequences,
    config_hash,
    featurize,
    load_features_meta,
    preprocess,
    video_id,
    write_csv_report,
)
from .ssm import (
    DivergenceError,
    ModelConfig,
    TrainConfig,
    load_checkpoint,
    predict_windows,
    save_checkpoint,
    train,
)
from .synth import default_class_specs, fifteen_class_specs, generate_dataset, load_class_specs
from .video import VideoFormatError


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    manifest: str = ""
    workdir: str = ""
    clip_seconds: float = 1.5
    t_bins: int = 4
    fg_threshold: int = 0
    mask: bool = True
    classes: str = "15"  # 15 | 3 | collapse
    hidden_dim: int = 64
    n_blocks: int = 2
    dropout: float = 0.2
    focal_gamma: float = 2.0
    lr: float = 0.001
    weight_decay: float = 0.01
    batch_size: int = 16
    max_epochs: int = 200
    plateau_patience: int = 10
    lr_factor: float = 0.2
    k_folds: int = 8
    seed: int = 0
    window: int = 5
    stride: int = 5

    def hash(self) -> str:
        return config_hash(asdict(self))

    def tags(self) -> dict:
        return {
            "config_hash": self.hash(),
            "seed": self.seed,
            "version": __version__,
            "mask": self.mask,
            "classes": self.classes,
        }


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        known = {f.name for f in fields(RunConfig)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg = RunConfig(**raw)
    for f in fields(RunConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, value)
    if cfg.classes not in ("15", "3", "collapse"):
        raise UsageError(f"classes must be 15, 3 or collapse, got {cfg.classes!r}")
    return cfg


def _train_cfg(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        batch_size=cfg.batch_size,
        max_epochs=cfg.max_epochs,
        plateau_patience=cfg.plateau_patience,
        lr_factor=cfg.lr_factor,
        seed=cfg.seed,
    )


def _model_cfg(cfg: RunConfig, input_dim: int) -> ModelConfig:
    return ModelConfig(
        input_dim=input_dim,
        hidden_dim=cfg.hidden_dim,
        n_blocks=cfg.n_blocks,
        n_classes=3 if cfg.classes == "3" else 15,
        dropout_rate=cfg.dropout,
        focal_gamma=cfg.focal_gamma,
    )


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        if not getattr(cfg, name):
            raise UsageError(f"--{name.replace('_', '-')} (or config key) required")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.specs:
        specs = load_class_specs(args.specs)
    elif args.n_classes == 15:
        specs = fifteen_class_specs()
    else:
        specs = default_class_specs()
    num, den = _parse_fps(args.fps)
    width, height = _parse_size(args.size)
    manifest = generate_dataset(
        specs,
        videos_per_class=args.videos_per_class,
        out_dir=args.out,
        duration=args.duration,
        fps_num=num,
        fps_den=den,
        width=width,
        height=height,
        seed=cfg.seed,
        distractors=args.distractor,
    )
    print(f"wrote {len(manifest)} videos and manifest to {args.out}")
    return 0


def cmd_preprocess(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "manifest", "workdir")
    manifest = load_manifest(cfg.manifest)
    result = preprocess(manifest, cfg.workdir, threshold=cfg.fg_threshold)
    for vid in result.processed:
        print(f"processed {vid}")
    for vid in result.skipped:
        print(f"skipped {vid} (up to date)")
    for vid, err in result.failed.items():
        print(f"FAILED {vid}: {err}", file=sys.stderr)
    print(
        f"preprocess: {len(result.processed)} processed, "
        f"{len(result.skipped)} skipped, {len(result.failed)} failed"
    )
    return 0 if not result.failed else 2


def cmd_featurize(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "manifest", "workdir")
    manifest = load_manifest(cfg.manifest)
    featurize(
        manifest,
        cfg.workdir,
        ClipSpec(clip_seconds=cfg.clip_seconds),
        t_bins=cfg.t_bins,
        use_mask=cfg.mask,
        seed=cfg.seed,
        extra_config=asdict(cfg),
    )
    n_grids = sum(1 for _ in Path(cfg.workdir).glob("feat/*/clip_*.mpfg"))
    print(f"featurize: {n_grids} clip grids (mask={'on' if cfg.mask else 'off'})")
    return 0


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "manifest", "workdir")
    manifest = load_manifest(cfg.manifest)
    samples = build_sequences(manifest, cfg.workdir, cfg.mask, cfg.classes)
    input_dim = next(iter(samples.values()))[0].shape[1]
    folds = make_folds(manifest, k=cfg.k_folds, seed=cfg.seed)
    ids = [video_id(i, r) for i, r in enumerate(manifest.rows)]
    val_ids = {ids[i] for i in folds[0]}
    train_set = [samples[v] for v in ids if v not in val_ids]
    val_set = [samples[v] for v in ids if v in val_ids]
    workdir = Path(cfg.workdir)
    ckpt = train(
        _model_cfg(cfg, input_dim),
        train_set,
        val_set,
        _train_cfg(cfg),
        log_path=workdir / "train_log.csv",
        pipeline=cfg.tags(),
    )
    save_checkpoint(ckpt, workdir / "checkpoint.mpck")
    print(
        f"trained: best val loss {ckpt.best_val_loss:.6f} at epoch "
        f"{ckpt.epoch}; checkpoint.mpck written"
    )
    return 0


def cmd_crossval(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "manifest", "workdir")
    manifest = load_manifest(cfg.manifest)
    samples = build_sequences(manifest, cfg.workdir, cfg.mask, cfg.classes)
    input_dim = next(iter(samples.values()))[0].shape[1]
    ids = [video_id(i, r) for i, r in enumerate(manifest.rows)]
    folds_idx = make_folds(manifest, k=cfg.k_folds, seed=cfg.seed)
    folds = [[ids[i] for i in fold] for fold in folds_idx]
    report_dir = Path(cfg.workdir) / "report"
    report_dir.mkdir(parents=True, exist_ok=True)
    result = run_crossval(
        samples, folds, _model_cfg(cfg, input_dim), _train_cfg(cfg),
        log_dir=report_dir,
    )
    for fr in result.fold_results:
        save_checkpoint(fr.checkpoint, report_dir / f"fold_{fr.fold}.mpck")
    write_report_bundle(cfg, manifest, ids, result, report_dir)
    print(f"crossval report written to {report_dir}")
    return 0


def write_report_bundle(
    cfg: RunConfig,
    manifest: DatasetManifest,
    ids: list[str],
    result: CrossvalResult,
    report_dir: Path,
) -> None:
    """predictions, metric tables, confusion SVGs and the QWK phase table."""
    tags = cfg.tags()
    k = 3 if cfg.classes == "3" else 15
    names = COLLAPSED_NAMES if k == 3 else CLASS_NAMES
    id_to_fold = {
        vid: fr.fold for fr in result.fold_results for vid in fr.video_ids
    }
    row_by_id = {video_id(i, r): r for i, r in enumerate(manifest.rows)}

    pred_of = dict(zip(result.pooled_ids, result.pooled_preds))
    truth_of = dict(zip(result.pooled_ids, result.pooled_truths))
    pred_header = ["video_id", "video_path", "fold", "true_class", "pred_class"]
    collapse = cfg.classes in ("15", "collapse")
    if collapse:
        pred_header += ["true_class_3", "pred_class_3"]
    pred_rows = []
    for vid in ids:
        row = row_by_id[vid]
        line = [
            vid, row.video_path, id_to_fold[vid],
            int(truth_of[vid]), int(pred_of[vid]),
        ]
        if collapse:
            line += [
                collapse_class_id(int(truth_of[vid])),
                collapse_class_id(int(pred_of[vid])),
            ]
        pred_rows.append(line)
    write_csv_report(report_dir / "predictions.csv", pred_header, pred_rows, tags)

    metric_rows = []
    for fr in result.fold_results:
        metric_rows.append(
            [f"fold_{fr.fold}", "micro_accuracy",
             micro_accuracy(fr.preds, fr.truths)]
        )
        metric_rows.append(
            [f"fold_{fr.fold}", "macro_f1", macro_f1(fr.preds, fr.truths, k)]
        )
    metric_rows.append(["pooled", "micro_accuracy", result.micro_accuracy()])
    metric_rows.append(["pooled", "macro_f1", result.macro_f1(k)])
    if collapse:
        t3 = np.array([collapse_class_id(int(t)) for t in result.pooled_truths])
        p3 = np.array([collapse_class_id(int(p)) for p in result.pooled_preds])
        metric_rows.append(
            ["pooled_3class", "micro_accuracy", micro_accuracy(p3, t3)]
        )
        metric_rows.append(["pooled_3class", "macro_f1", macro_f1(p3, t3, 3)])
    write_csv_report(
        report_dir / "metrics.csv", ["scope", "metric", "value"],
        metric_rows, tags,
    )

    conf = normalized_confusion(result.pooled_preds, result.pooled_truths, k)
    svg = render_confusion_svg(conf, names)
    (report_dir / f"confusion_{k}.svg").write_text(
        f"<!-- {','.join(f'{kk}={tags[kk]}' for kk in sorted(tags))} -->\n" + svg,
        encoding="utf-8",
    )
    if collapse:
        conf3 = normalized_confusion(
            [collapse_class_id(int(p)) for p in result.pooled_preds],
            [collapse_class_id(int(t)) for t in result.pooled_truths],
            3,
        )
        (report_dir / "confusion_3.svg").write_text(
            f"<!-- {','.join(f'{kk}={tags[kk]}' for kk in sorted(tags))} -->\n"
            + render_confusion_svg(conf3, COLLAPSED_NAMES),
            encoding="utf-8",
        )

    series = (
        _mouse_series(manifest, ids, truth_of, pred_of) if collapse else []
    )
    table = qwk_by_phase(series)
    phase_rows = [
        [row] + [table[row][col] for col in PHASE_COLUMNS] for row in PHASE_ROWS
    ]
    write_csv_report(
        report_dir / "qwk_phase.csv",
        ["condition"] + list(PHASE_COLUMNS),
        phase_rows,
        tags,
    )


def _mouse_series(manifest, ids, truth_of, pred_of) -> list[MouseSeries]:
    """Ordinal-encoded per-mouse timelines from pooled 15-class predictions.

    Predicted class ids map to a timepoint; its ordinal within the TRUE
    condition's timeline is the nearest timeline day (earlier wins ties).
    """
    labels = all_labels()
    groups: dict[tuple[str, str], list[tuple[float, str, int, int]]] = {}
    for i, row in enumerate(manifest.rows):
        if not row.mouse_id:
            continue
        vid = ids[i]
        day_order = ordinal_rank(row.condition, row.timepoint)
        groups.setdefault((row.mouse_id, row.condition), []).append(
            (day_order, row.timepoint, int(truth_of[vid]), int(pred_of[vid]))
        )
    series = []
    for (mouse, condition), entries in sorted(groups.items()):
        entries.sort()
        tps = [tp for _, tp, _, _ in entries]
        true_ord = [rank for rank, _, _, _ in entries]
        pred_ord = [
            nearest_ordinal(condition, labels[pred].timepoint)
            for _, _, _, pred in entries
        ]
        series.append(
            MouseSeries(
                mouse_id=mouse,
                condition=condition,
                timepoints=tps,
                true_ord=true_ord,
                pred_ord=pred_ord,
            )
        )
    return series


def cmd_cohort(cfg: RunConfig, args: argparse.Namespace) -> int:
    _require(cfg, "manifest", "workdir")
    ckpt = load_checkpoint(args.checkpoint)
    meta = load_features_meta(cfg.workdir)
    ckpt_mask = ckpt.pipeline.get("mask")
    if ckpt_mask is not None and bool(ckpt_mask) != bool(meta["mask"]):
        raise PipelineMismatchError(
            f"pipeline mismatch: checkpoint mask={ckpt_mask}, "
            f"features mask={meta['mask']}"
        )
    manifest = load_manifest(cfg.manifest)
    class_mode = "3" if ckpt.config.n_classes == 3 else "15"
    samples = build_sequences(manifest, cfg.workdir, bool(meta["mask"]), class_mode)
    input_dim = next(iter(samples.values()))[0].shape[1]
    if input_dim != ckpt.config.input_dim:
        raise PipelineMismatchError(
            f"pipeline mismatch: checkpoint input_dim={ckpt.config.input_dim}, "
            f"features give {input_dim}"
        )

    by_cohort: dict[str, list[int]] = {}
    for i, row in enumerate(manifest.rows):
        vid = video_id(i, row)
        x = samples[vid][0]
        window = min(cfg.window, x.shape[0])
        preds = predict_windows(ckpt, x, window=window, stride=cfg.stride)
        if ckpt.config.n_classes != 3:
            preds = [collapse_class_id(p) for p in preds]
        by_cohort.setdefault(row.cohort or "all", []).extend(preds)

    rows = cohort_report(by_cohort)
    out = Path(cfg.workdir) / "cohort_report.csv"
    write_csv_report(
        out,
        ["cohort", "formalin_pct", "control_pct", "sni_pct"],
        [list(r) for r in rows],
        cfg.tags(),
    )
    for cohort, f_pct, c_pct, s_pct in rows:
        print(f"{cohort}: formalin {f_pct:.2f}% control {c_pct:.2f}% sni {s_pct:.2f}%")
    print(f"cohort report written to {out}")
    return 0


def cmd_report(cfg: RunConfig, args: argparse.Namespace) -> int:
    """Re-render metric tables and the confusion SVG from a predictions CSV."""
    lines = Path(args.predictions).read_text(encoding="utf-8").splitlines()
    rows = [ln.split(",") for ln in lines if ln and not ln.startswith("#")]
    header, body = rows[0], rows[1:]
    t_idx = header.index("true_class")
    p_idx = header.index("pred_class")
    truths = np.array([int(r[t_idx]) for r in body])
    preds = np.array([int(r[p_idx]) for r in body])
    k = 3 if cfg.classes == "3" else 15
    names = COLLAPSED_NAMES if k == 3 else CLASS_NAMES
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    tags = cfg.tags()
    write_csv_report(
        out_dir / "metrics.csv",
        ["scope", "metric", "value"],
        [
            ["pooled", "micro_accuracy", micro_accuracy(preds, truths)],
            ["pooled", "macro_f1", macro_f1(preds, truths, k)],
        ],
        tags,
    )
    conf = normalized_confusion(preds, truths, k)
    (out_dir / f"confusion_{k}.svg").write_text(
        render_confusion_svg(conf, names), encoding="utf-8"
    )
    print(f"report written to {out_dir}")
    return 0


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def _parse_fps(text: str) -> tuple[int, int]:
    if "/" in text:
        num, den = text.split("/", 1)
        return int(num), int(den)
    return int(text), 1


def _parse_size(text: str) -> tuple[int, int]:
    w, h = text.lower().split("x", 1)
    return int(w), int(h)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (flags override it)")
    p.add_argument("--manifest", default=None)
    p.add_argument("--workdir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mask", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--classes", choices=["15", "3", "collapse"], default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="painpipe", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n-classes", type=int, choices=[3, 15], default=3)
    p.add_argument("--videos-per-class", type=int, default=24)
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--fps", default="20")
    p.add_argument("--size", default="112x112")
    p.add_argument("--distractor", action="store_true")
    p.add_argument("--specs", help="JSON file of custom class specs")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("preprocess", help="background removal per video")
    _add_common(p)
    p.add_argument("--fg-threshold", type=int, default=None, dest="fg_threshold")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("featurize", help="clip feature grids (+ masking)")
    _add_common(p)
    p.add_argument("--clip-seconds", type=float, default=None, dest="clip_seconds")
    p.add_argument("--t-bins", type=int, default=None, dest="t_bins")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("train", help="train a single checkpoint")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("crossval", help="k-fold cross-validation + reports")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_crossval)

    p = sub.add_parser("cohort", help="windowed 3-class cohort percentages")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(func=cmd_cohort)

    p = sub.add_parser("report", help="re-render reports from predictions CSV")
    _add_common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hidden-dim", type=int, default=None, dest="hidden_dim")
    p.add_argument("--n-blocks", type=int, default=None, dest="n_blocks")
    p.add_argument("--max-epochs", type=int, default=None, dest="max_epochs")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--k-folds", type=int, default=None, dest="k_folds")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = _load_config(args)
        return args.func(cfg, args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, KeyError, PipelineMismatchError,
            VideoFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
