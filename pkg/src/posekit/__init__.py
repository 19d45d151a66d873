"""Heatmap-based 6-DoF pose estimation back-end.

Projection-heatmap post-processing (learned projection grouping),
hypothesis-pool sampling, correspondence evaluation with a weighted DLT
solve, classical baselines, pose metrics, and a synthetic data
generator.
"""

__version__ = "0.1.0"

from .geom import (  # noqa: F401
    CameraIntrinsics,
    CornerSet,
    Correspondence2D3D,
    Pose,
    corners_from_extent,
    project,
    transform_points,
)
from .heatmap import HeatmapStack  # noqa: F401
