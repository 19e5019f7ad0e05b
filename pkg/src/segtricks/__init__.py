"""Guided-filter refinement, crop-zoom consistency and normalized-cut losses for
unsupervised saliency segmentation, at desk scale.

Hot loops (box sums, connected components, exhaustive Ncut search, Jacobi
eigensolver, graph TV) run in a compiled extension when it is available and
fall back to numpy otherwise; ``segtricks.BACKEND`` says which one is active.
"""
__version__ = "0.1.0"

from ._backend import BACKEND
from .consistency import (
    ConsistencyBatchResult,
    CropPolicy,
    CropSamplingError,
    consistency_step,
    equivariance_grad,
    equivariance_loss,
    sample_crop,
)
from .filtering import (
    GuidedFilterParams,
    box_filter,
    guided_filter,
    guided_filter_vjp,
    integral_image,
    refine_mask,
)
from .graph import (
    DegeneratePartitionError,
    EigenSolverError,
    LossWeights,
    brute_force_min_ncut,
    discrete_assoc,
    discrete_cut,
    discrete_ncut,
    gtv_coarse_weights,
    gtv_fine_weights,
    gtv_grad,
    gtv_loss,
    sempart_total_loss,
    soft_ncut_grad,
    soft_ncut_loss,
    spectral_bipartition,
    sr_loss,
    tokencut_affinity,
)
from .metrics import (
    BBox,
    EmptyPredictionError,
    MetricUndefinedError,
    bbox_iou,
    connected_components,
    corloc,
    iou,
    largest_bbox_component,
    max_f_beta,
    pixel_accuracy,
    saliency_report,
)
from .model import (
    Sample,
    ToyHead,
    TrainConfig,
    TrainingDivergedError,
    backward,
    forward,
    make_synthetic_dataset,
    run_toy,
    total_objective,
    train,
)
from .tensorio import (
    CropRect,
    PngFormatError,
    TensorFormatError,
    crop_zoom,
    read_png,
    read_tensor,
    resize_bilinear,
    resize_nearest,
    to_grayscale,
    write_png,
    write_tensor,
)

__all__ = [
    "__version__",
    "BACKEND",
    "BBox",
    "ConsistencyBatchResult",
    "CropPolicy",
    "CropRect",
    "CropSamplingError",
    "DegeneratePartitionError",
    "EigenSolverError",
    "EmptyPredictionError",
    "GuidedFilterParams",
    "LossWeights",
    "MetricUndefinedError",
    "PngFormatError",
    "Sample",
    "TensorFormatError",
    "ToyHead",
    "TrainConfig",
    "TrainingDivergedError",
    "backward",
    "bbox_iou",
    "box_filter",
    "brute_force_min_ncut",
    "connected_components",
    "consistency_step",
    "corloc",
    "crop_zoom",
    "discrete_assoc",
    "discrete_cut",
    "discrete_ncut",
    "equivariance_grad",
    "equivariance_loss",
    "forward",
    "gtv_coarse_weights",
    "gtv_fine_weights",
    "gtv_grad",
    "gtv_loss",
    "guided_filter",
    "guided_filter_vjp",
    "integral_image",
    "iou",
    "largest_bbox_component",
    "make_synthetic_dataset",
    "max_f_beta",
    "pixel_accuracy",
    "read_png",
    "read_tensor",
    "refine_mask",
    "resize_bilinear",
    "resize_nearest",
    "run_toy",
    "saliency_report",
    "sample_crop",
    "sempart_total_loss",
    "soft_ncut_grad",
    "soft_ncut_loss",
    "spectral_bipartition",
    "sr_loss",
    "to_grayscale",
    "tokencut_affinity",
    "total_objective",
    "train",
    "write_png",
    "write_tensor",
]
