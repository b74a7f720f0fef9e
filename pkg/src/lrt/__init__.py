"""LiDAR range-image tools.

Scan ingestion, spherical projection to multi-channel range images,
normal estimation, stripe-artifact repair, boundary extraction, the loss
kernels of the multi-task adaptation objective (with analytic gradients),
and IoU/mIoU evaluation.
"""

from .core import (
    BoundaryMap,
    FeatureMatrix,
    LabelImage,
    LossWeights,
    PointCloud,
    RangeImageStack,
    SensorModel,
    validate_stack,
)

__version__ = "0.1.0"

__all__ = [
    "BoundaryMap",
    "FeatureMatrix",
    "LabelImage",
    "LossWeights",
    "PointCloud",
    "RangeImageStack",
    "SensorModel",
    "validate_stack",
    "__version__",
]
