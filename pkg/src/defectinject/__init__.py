"""Defect injection and batch balancing for imbalanced segmentation datasets.

The engine transfers defects from defective donor images onto defect-free
ones, via Poisson seamless cloning or cut-paste, until each training batch's
per-class counts are uniform. It also ships reference loss/metric kernels
(BCE, Dice, weighted CE, dataset IoU) with analytic gradients for
verification.
"""

__version__ = "0.1.0"

from .balance import (
    BalanceConfig,
    BalanceOutcome,
    balance_batch,
    is_balanced,
    iter_balanced_batches,
    select_minority_class,
)
from .config import DatasetConfig, RunConfig
from .dataset import (
    load_dataset,
    read_image,
    read_manifest,
    read_mask,
    resize_sample,
    write_image,
    write_manifest,
    write_mask,
)
from .errors import (
    ConvergenceError,
    DecodeError,
    EmptyRegionError,
    EngineError,
    IngestionError,
    InjectionError,
    MaskValidationError,
    PlacementError,
    TransformError,
    UnbalanceableError,
)
from .estimators import BatchBalancer, DefectInjector
from .inject import InjectionConfig, cut_paste, inject, poisson_inject
from .metrics import (
    ConfusionCounts,
    accumulate,
    accumulate_per_class,
    bce_loss,
    combined_loss,
    dataset_iou,
    dice_loss,
    inverse_frequency_weights,
    wce_loss,
)
from .model import (
    Batch,
    ClassHistogram,
    DatasetIndex,
    ImageBuffer,
    InjectionRecord,
    Sample,
    SegMask,
    class_histogram,
    shuffle_samples,
    subsample_per_class,
    validate_single_class,
)
from .poisson import (
    GuidanceField,
    RegionTopology,
    SolverConfig,
    build_region,
    guidance_field,
    residual,
    solve,
)
from .transforms import TransformParams, transform_defect

__all__ = [
    "BalanceConfig",
    "BalanceOutcome",
    "Batch",
    "BatchBalancer",
    "ClassHistogram",
    "ConfusionCounts",
    "ConvergenceError",
    "DatasetConfig",
    "DatasetIndex",
    "DecodeError",
    "DefectInjector",
    "EmptyRegionError",
    "EngineError",
    "GuidanceField",
    "ImageBuffer",
    "IngestionError",
    "InjectionConfig",
    "InjectionError",
    "InjectionRecord",
    "MaskValidationError",
    "PlacementError",
    "RegionTopology",
    "RunConfig",
    "Sample",
    "SegMask",
    "SolverConfig",
    "TransformError",
    "TransformParams",
    "UnbalanceableError",
    "accumulate",
    "accumulate_per_class",
    "balance_batch",
    "bce_loss",
    "build_region",
    "class_histogram",
    "combined_loss",
    "cut_paste",
    "dataset_iou",
    "dice_loss",
    "guidance_field",
    "inject",
    "inverse_frequency_weights",
    "is_balanced",
    "iter_balanced_batches",
    "load_dataset",
    "poisson_inject",
    "read_image",
    "read_manifest",
    "read_mask",
    "residual",
    "resize_sample",
    "select_minority_class",
    "shuffle_samples",
    "solve",
    "subsample_per_class",
    "transform_defect",
    "validate_single_class",
    "wce_loss",
    "write_image",
    "write_manifest",
    "write_mask",
]
