"""Two-view camera geometry from affine correspondences.

Minimal solvers for homographies, fundamental and essential matrices from
affine and point correspondences, symmetric intensity-based refinement of
affine matches, first-order covariance propagation for solver outputs, and
a preemptive, locally optimized robust estimation loop, together with a
synthetic-scene oracle and evaluation metrics.
"""

from . import errors
from .geometry import (
    AffineCorrespondence,
    CameraIntrinsics,
    EssentialMatrix,
    FundamentalMatrix,
    Homography,
    PointCorrespondence,
    ac_to_point_correspondences,
    affinity_from_homography,
    decompose_essential,
    reprojection_error_h,
    sampson_distance_f,
)

__all__ = [
    "errors",
    "AffineCorrespondence",
    "CameraIntrinsics",
    "EssentialMatrix",
    "FundamentalMatrix",
    "Homography",
    "PointCorrespondence",
    "ac_to_point_correspondences",
    "affinity_from_homography",
    "decompose_essential",
    "reprojection_error_h",
    "sampson_distance_f",
]
