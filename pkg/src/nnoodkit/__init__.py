"""nnoodkit: synthetic anomaly tasks, calibration and pixel-wise evaluation
for n-dimensional images."""

__version__ = "0.1.0"

from .image import (
    AnomalyMap,
    DatasetDescriptor,
    ForegroundMask,
    ForegroundStats,
    NdImage,
    foreground_mask,
    foreground_stats,
    positional_encoding,
    sobel_magnitude,
    zscore_normalize,
)
from .metrics import MetricReport, StopState, auroc, average_precision, evaluate_dataset, update_stop
from .patches import PatchSpec, PatchTransform, alpha_blend, make_rect_patch
from .poisson import GuidanceField, PoissonSolution, build_guidance, seamless_clone, solve_poisson
from .sampling import PatchGrid, aggregate_tiles, extract_patch, inference_grid, sample_training_locations
from .tasks import (
    AugmentedSample,
    LogisticFit,
    Task,
    TaskParams,
    apply_task,
    calibrate,
    score_transform,
)

__all__ = [
    "__version__",
    "AnomalyMap",
    "AugmentedSample",
    "DatasetDescriptor",
    "ForegroundMask",
    "ForegroundStats",
    "GuidanceField",
    "LogisticFit",
    "MetricReport",
    "NdImage",
    "PatchGrid",
    "PatchSpec",
    "PatchTransform",
    "PoissonSolution",
    "StopState",
    "Task",
    "TaskParams",
    "aggregate_tiles",
    "alpha_blend",
    "apply_task",
    "auroc",
    "average_precision",
    "build_guidance",
    "calibrate",
    "evaluate_dataset",
    "extract_patch",
    "foreground_mask",
    "foreground_stats",
    "inference_grid",
    "make_rect_patch",
    "positional_encoding",
    "sample_training_locations",
    "score_transform",
    "seamless_clone",
    "sobel_magnitude",
    "solve_poisson",
    "update_stop",
    "zscore_normalize",
]
