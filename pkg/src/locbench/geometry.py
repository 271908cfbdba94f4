"""Pose algebra, pinhole projection and pose-error metrics.

Poses are stored as (camera center, world-to-camera unit quaternion), so a
world point ``X`` maps to camera coordinates as ``R(q) @ (X - c)``.
Quaternions are (w, x, y, z).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ZeroNorm

BEHIND_EPS = 1e-9


def canonical_quaternion(q) -> np.ndarray:
    """Unit quaternion with w >= 0 (first nonzero component >= 0 when w == 0)."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ZeroNorm(f"quaternion {q} has zero norm")
    if abs(n - 1.0) > 4 * np.finfo(float).eps:
        q = q / n
    for value in q:
        if value != 0.0:
            if value < 0.0:
                q = -q
            break
    return q


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quaternion(R) -> np.ndarray:
    # Shepperd's method: pick the largest diagonal term to avoid cancellation.
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    candidates = [tr, R[0, 0], R[1, 1], R[2, 2]]
    i = int(np.argmax(candidates))
    if i == 0:
        s = 2.0 * np.sqrt(1.0 + tr)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif i == 1:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif i == 2:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return canonical_quaternion(q)


def axis_angle_quaternion(axis, angle_rad: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle_rad
    return canonical_quaternion(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues' formula."""
    omega = np.asarray(omega, dtype=float)
    theta = np.linalg.norm(omega)
    K = skew(omega)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * K @ K


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera pose: center ``position`` and world-to-camera ``orientation``."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "position", _frozen(c))
        object.__setattr__(self, "orientation", _frozen(canonical_quaternion(self.orientation)))

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_rotation(cls, R, position) -> "Pose":
        return cls(position, matrix_to_quaternion(R))

    @classmethod
    def from_rt(cls, R, t) -> "Pose":
        """From the ``x_cam = R x_world + t`` convention."""
        R = np.asarray(R, dtype=float)
        return cls(-R.T @ np.asarray(t, dtype=float), matrix_to_quaternion(R))

    @classmethod
    def look_at(cls, position, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera at ``position`` with its +z axis through ``target``; image y points down."""
        position = np.asarray(position, dtype=float)
        z = np.asarray(target, dtype=float) - position
        z = z / np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=float))
        if np.linalg.norm(x) < 1e-9:
            x = np.cross(z, [1.0, 0.0, 0.0])
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        return cls.from_rotation(np.stack([x, y, z]), position)

    @cached_property
    def rotation(self) -> np.ndarray:
        return _frozen(quaternion_to_matrix(self.orientation))

    @property
    def translation(self) -> np.ndarray:
        return -self.rotation @ self.position

    @property
    def viewing_direction(self) -> np.ndarray:
        """Optical axis in world coordinates."""
        return self.rotation[2]

    def to_camera(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return (points - self.position) @ self.rotation.T

    def isclose(self, other: "Pose", atol_m: float = 1e-9, atol_deg: float = 1e-7) -> bool:
        return (pose_position_error(self, other) <= atol_m
                and pose_rotation_error(self, other) <= atol_deg)

    def __repr__(self):
        c = ", ".join(f"{v:.6g}" for v in self.position)
        q = ", ".join(f"{v:.6g}" for v in self.orientation)
        return f"Pose(c=({c}), q=({q}))"


@dataclass(frozen=True)
class CameraIntrinsics:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def bearing(self, pixels) -> np.ndarray:
        """Unit rays in camera coordinates for an (N, 2) array of pixels."""
        px = np.atleast_2d(np.asarray(pixels, dtype=float))
        rays = np.column_stack([(px[:, 0] - self.cx) / self.fx,
                                (px[:, 1] - self.cy) / self.fy,
                                np.ones(len(px))])
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)

    def contains(self, pixels) -> np.ndarray:
        px = np.atleast_2d(np.asarray(pixels, dtype=float))
        return ((px[:, 0] >= 0) & (px[:, 0] <= self.width)
                & (px[:, 1] >= 0) & (px[:, 1] <= self.height))


def pose_position_error(estimated: Pose, reference: Pose) -> float:
    return float(np.linalg.norm(estimated.position - reference.position))


def rotation_angle_deg(R) -> float:
    """Angle of a rotation matrix in degrees.

    Same value as ``arccos((trace(R) - 1) / 2)`` but evaluated as
    ``atan2(sin, cos)`` with the sine taken from the skew-symmetric part, which
    stays accurate near 0 and 180 degrees.
    """
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    sin = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    angle = np.degrees(np.arctan2(min(sin, 1.0), cos))
    return float(np.clip(angle, 0.0, 180.0))


def pose_rotation_error(estimated: Pose, reference: Pose) -> float:
    """Angle (degrees) of the smallest rotation aligning the two orientations."""
    return rotation_angle_deg(estimated.rotation.T @ reference.rotation)


def blend_quaternions(quaternions: Sequence, weights: Sequence[float]) -> np.ndarray:
    """Weighted sum of hemisphere-aligned quaternions, renormalized."""
    Q = np.asarray(quaternions, dtype=float).reshape(-1, 4)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(Q) != len(w) or len(Q) == 0:
        raise ValueError("need as many weights as quaternions (at least one)")
    signs = np.where(Q @ Q[0] < 0.0, -1.0, 1.0)
    total = (w * signs) @ Q
    if np.linalg.norm(total) < 1e-12:
        raise ZeroNorm("weighted quaternion sum cancelled out")
    return canonical_quaternion(total)


def blend_poses(poses: Sequence[Pose], weights: Sequence[float]) -> Pose:
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(poses) != len(w) or len(w) == 0:
        raise ValueError("need as many weights as poses (at least one)")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    nonzero = np.flatnonzero(w)
    if len(nonzero) == 1 and w[nonzero[0]] == 1.0:
        return poses[int(nonzero[0])]
    position = w @ np.stack([p.position for p in poses])
    orientation = blend_quaternions([p.orientation for p in poses], w)
    return Pose(position, orientation)


def project(point, pose: Pose, intrinsics: CameraIntrinsics) -> Optional[Tuple[float, float]]:
    """Pixel of a world point, or None when the point is behind the camera.

    Points outside the image bounds are still returned.
    """
    x, y, z = pose.to_camera(np.asarray(point, dtype=float).reshape(3))
    if z <= BEHIND_EPS:
        return None
    return (intrinsics.fx * x / z + intrinsics.cx, intrinsics.fy * y / z + intrinsics.cy)


def project_points(points, pose: Pose, intrinsics: CameraIntrinsics):
    """Vectorized projection: returns ((N, 2) pixels, (N,) depths).

    Pixels of points with depth <= 1e-9 are NaN.
    """
    Xc = pose.to_camera(np.atleast_2d(points))
    z = Xc[:, 2]
    front = z > BEHIND_EPS
    uv = np.full((len(Xc), 2), np.nan)
    uv[front, 0] = intrinsics.fx * Xc[front, 0] / z[front] + intrinsics.cx
    uv[front, 1] = intrinsics.fy * Xc[front, 1] / z[front] + intrinsics.cy
    return uv, z
