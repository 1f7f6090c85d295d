"""Teacher-student distillation for binary nuclei segmentation.

Pipeline: a pluggable teacher turns instance maps into binary pseudo-labels
(distill), a U-Net student (model) trains on them with a bias-correcting
compound loss plus split-and-flip consistency (losses, augment, train), and
predictions are scored with the full metric suite and rank-based significance
tests (metrics, stats). The cli module exposes the whole thing as commands.
"""

from .augment import HORIZONTAL_SPLIT, VERTICAL_SPLIT, SplitFlipTransform, apply, sample_transform
from .data import (
    BinaryMask,
    DatasetManifest,
    ImagePatch,
    InstanceMap,
    ManifestRecord,
    build_manifest,
)
from .distill import CorruptingTeacher, FileTeacher, corrupt_instances, generate_pseudo_labels
from .losses import LossConfig, bce_loss, compound_loss, consistency_loss, tversky_loss
from .metrics import ConfusionCounts, MetricsRecord, confusion, evaluate_set, hausdorff
from .model import StudentModel, UNetSpec, build_student, dropout_schedule, forward
from .stats import MannWhitneyResult, mann_whitney_u, significance_label
from .synth import SynthConfig, generate_dataset
from .train import OptimizerConfig, TrainConfig, TrainReport, fit, rmsprop_step

__all__ = [
    "HORIZONTAL_SPLIT",
    "VERTICAL_SPLIT",
    "SplitFlipTransform",
    "apply",
    "sample_transform",
    "BinaryMask",
    "DatasetManifest",
    "ImagePatch",
    "InstanceMap",
    "ManifestRecord",
    "build_manifest",
    "CorruptingTeacher",
    "FileTeacher",
    "corrupt_instances",
    "generate_pseudo_labels",
    "LossConfig",
    "bce_loss",
    "compound_loss",
    "consistency_loss",
    "tversky_loss",
    "ConfusionCounts",
    "MetricsRecord",
    "confusion",
    "evaluate_set",
    "hausdorff",
    "StudentModel",
    "UNetSpec",
    "build_student",
    "dropout_schedule",
    "forward",
    "MannWhitneyResult",
    "mann_whitney_u",
    "significance_label",
    "SynthConfig",
    "generate_dataset",
    "OptimizerConfig",
    "TrainConfig",
    "TrainReport",
    "fit",
    "rmsprop_step",
]
