"""Weakly supervised temporal action localization from video-level labels.

Operates on pre-extracted per-frame feature sequences: an attention network
pools frames into action/background descriptors, shuffle-based tasks and
adversarial perturbations regularize training, and a decoder turns class
activations into scored temporal detections.
"""

__version__ = "0.1.0"

from .data import (
    DatasetManifest,
    FeatureSequence,
    GroundTruthInterval,
    SynthConfig,
    VideoLabel,
    VideoRecord,
    generate_synthetic,
    load_manifest,
    read_features,
    save_manifest,
    write_features,
)
from .localize import (
    Detection,
    EvalReport,
    average_precision,
    decode_dataset,
    decode_detections,
    evaluate,
    iou,
    read_detections_json,
    write_detections_json,
    write_report_csv,
    write_report_json,
)
from .model import Model
from .ndtensor import AdamState, GradTape, ShapeError, Tensor, adam_step
from .trainer import (
    Checkpoint,
    Hyperparams,
    LossBreakdown,
    TrainResult,
    ablate,
    classification_accuracy,
    load_checkpoint,
    save_checkpoint,
    total_loss,
    train,
)

__all__ = [
    "AdamState",
    "Checkpoint",
    "DatasetManifest",
    "Detection",
    "EvalReport",
    "FeatureSequence",
    "GradTape",
    "GroundTruthInterval",
    "Hyperparams",
    "LossBreakdown",
    "Model",
    "ShapeError",
    "SynthConfig",
    "Tensor",
    "TrainResult",
    "VideoLabel",
    "VideoRecord",
    "ablate",
    "adam_step",
    "average_precision",
    "classification_accuracy",
    "decode_dataset",
    "decode_detections",
    "evaluate",
    "generate_synthetic",
    "iou",
    "load_checkpoint",
    "load_manifest",
    "read_detections_json",
    "read_features",
    "save_checkpoint",
    "save_manifest",
    "total_loss",
    "train",
    "write_detections_json",
    "write_features",
    "write_report_csv",
    "write_report_json",
    "__version__",
]
