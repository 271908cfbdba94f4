"""Linear multi-view triangulation with cheirality and baseline gates."""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np

from ..errors import BehindCamera, DegenerateBaseline
from ..geometry import CameraIntrinsics, Pose

MIN_TRI_ANGLE_DEG = 1.0

Observation = Tuple[Sequence[float], Pose, CameraIntrinsics]


def max_triangulation_angle(point, centers) -> float:
    """Largest pairwise angle (degrees) between rays from camera centers to the point."""
    rays = np.asarray(point, dtype=float) - np.asarray(centers, dtype=float)
    rays = rays / np.linalg.norm(rays, axis=1, keepdims=True)
    i, j = np.triu_indices(len(rays), k=1)
    if len(i) == 0:
        return 0.0
    cos = np.clip(np.sum(rays[i] * rays[j], axis=1), -1.0, 1.0)
    sin = np.linalg.norm(np.cross(rays[i], rays[j]), axis=1)
    return float(np.degrees(np.arctan2(sin, cos)).max())


def triangulate_dlt(observations: Sequence[Observation]) -> np.ndarray:
    """Algebraic least-squares point from two or more calibrated views (no gates)."""
    centers = np.stack([pose.position for _, pose, _ in observations])
    origin = centers.mean(axis=0)
    rows = []
    for pixel, pose, intr in observations:
        x = (pixel[0] - intr.cx) / intr.fx
        y = (pixel[1] - intr.cy) / intr.fy
        R = pose.rotation
        # shift the world origin to the mean center for conditioning
        P = np.column_stack([R, R @ (origin - pose.position)])
        r0 = x * P[2] - P[0]
        r1 = y * P[2] - P[1]
        rows.append(r0 / np.linalg.norm(r0))
        rows.append(r1 / np.linalg.norm(r1))
    _, _, vt = np.linalg.svd(np.stack(rows))
    X = vt[-1]
    if abs(X[3]) < 1e-15:
        raise DegenerateBaseline("point at infinity")
    return X[:3] / X[3] + origin


def triangulate(observations: Sequence[Observation],
                min_tri_angle: float = MIN_TRI_ANGLE_DEG) -> np.ndarray:
    """Triangulate a 3D point from (pixel, pose, intrinsics) observations.

    Raises DegenerateBaseline when all centers coincide or the widest ray pair
    is narrower than ``min_tri_angle`` degrees, and BehindCamera when the
    solution is not in front of every camera.
    """
    if len(observations) < 2:
        raise ValueError("triangulation needs at least two observations")
    centers = np.stack([pose.position for _, pose, _ in observations])
    spread = np.max(np.linalg.norm(centers - centers[0], axis=1))
    if spread < 1e-9:
        raise DegenerateBaseline("all camera centers coincide")
    X = triangulate_dlt(observations)
    if not np.all(np.isfinite(X)):
        raise DegenerateBaseline("triangulation is ill-conditioned")
    for _, pose, _ in observations:
        if pose.to_camera(X)[2] <= 0.0:
            raise BehindCamera("triangulated point is behind a camera")
    if max_triangulation_angle(X, centers) < min_tri_angle:
        raise DegenerateBaseline("triangulation angle below threshold")
    return X
