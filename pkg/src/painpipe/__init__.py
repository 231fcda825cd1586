"""Pose-free pain-behavior classification from long fixed-camera videos.

Pipeline: temporal-median background removal -> per-clip 7x7 feature grids
-> 3x3-of-7x7 response masking -> linear-time state-space sequence
classifier, with an 8-fold cross-validation evaluation protocol.
"""

__version__ = "0.1.0"

from .background import (
    BackgroundModel,
    compute_background,
    compute_background_streaming,
    extract_foreground,
)
from .features import (
    ClipSpec,
    FeatureGrid,
    extract_motion_energy,
    load_feature_grid,
    save_feature_grid,
    segment_clips,
)
from .labels import (
    DatasetManifest,
    ManifestRow,
    PainLabel,
    all_labels,
    collapse_to_3,
    load_manifest,
)
from .mask import MaskWindow, apply_mask, mask_pipeline, select_window
from .ssm import (
    ModelConfig,
    SsmCheckpoint,
    TrainConfig,
    backward,
    focal_loss,
    forward,
    load_checkpoint,
    predict,
    predict_windows,
    save_checkpoint,
    ssm_scan,
    train,
)
from .evaluate import (
    cohort_report,
    macro_f1,
    make_folds,
    micro_accuracy,
    normalized_confusion,
    qwk,
    qwk_by_phase,
    run_crossval,
)
from .synth import SynthClassSpec, default_class_specs, generate_dataset, generate_video
from .video import RawVideo, crop_time, load_video, save_video

__all__ = [
    "BackgroundModel",
    "ClipSpec",
    "DatasetManifest",
    "FeatureGrid",
    "ManifestRow",
    "MaskWindow",
    "ModelConfig",
    "PainLabel",
    "RawVideo",
    "SsmCheckpoint",
    "SynthClassSpec",
    "TrainConfig",
    "all_labels",
    "apply_mask",
    "backward",
    "cohort_report",
    "collapse_to_3",
    "compute_background",
    "compute_background_streaming",
    "crop_time",
    "default_class_specs",
    "extract_foreground",
    "extract_motion_energy",
    "focal_loss",
    "forward",
    "generate_dataset",
    "generate_video",
    "load_checkpoint",
    "load_feature_grid",
    "load_manifest",
    "load_video",
    "macro_f1",
    "make_folds",
    "mask_pipeline",
    "micro_accuracy",
    "normalized_confusion",
    "predict",
    "predict_windows",
    "qwk",
    "qwk_by_phase",
    "run_crossval",
    "save_checkpoint",
    "save_feature_grid",
    "save_video",
    "segment_clips",
    "select_window",
    "ssm_scan",
    "train",
]
