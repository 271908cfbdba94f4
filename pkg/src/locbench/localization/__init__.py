"""Triangulation, PNP with RANSAC, pose refinement and map-based localization."""

from .localize import (
    DEGENERATE_BASELINE,
    INSUFFICIENT_RELEVANT,
    MATCHING_TOO_WEAK,
    OUTCOMES,
    RANSAC_FAILED,
    SUCCESS,
    LocalizationResult,
    gather_correspondences,
    localize_global,
    localize_local_sfm,
    query_seed,
)
from .mapping import MatchSet, PointMap, build_global_map, build_tracks
from .pnp import RansacParams, p3p, pnp_ransac, reprojection_errors
from .refine import refine_pose, reprojection_jacobian, reprojection_residuals
from .triangulation import triangulate

__all__ = [
    "DEGENERATE_BASELINE", "INSUFFICIENT_RELEVANT", "MATCHING_TOO_WEAK", "OUTCOMES",
    "RANSAC_FAILED", "SUCCESS", "LocalizationResult", "MatchSet", "PointMap", "RansacParams",
    "build_global_map", "build_tracks", "gather_correspondences", "localize_global",
    "localize_local_sfm", "p3p", "pnp_ransac", "query_seed", "refine_pose",
    "reprojection_errors", "reprojection_jacobian", "reprojection_residuals", "triangulate",
]
