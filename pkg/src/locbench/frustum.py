"""Viewing frusta, their overlap measured by an inscribed sphere, and pair selection."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.optimize import linprog

from .geometry import CameraIntrinsics, Pose

DEFAULT_NEAR = 0.1
DEFAULT_FAR = 50.0


@dataclass(frozen=True)
class Frustum:
    pose: Pose
    intrinsics: CameraIntrinsics
    near: float = DEFAULT_NEAR
    far: float = DEFAULT_FAR

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")

    def halfspaces(self) -> Tuple[np.ndarray, np.ndarray]:
        """(A, b) with unit outward normals: the frustum is ``{x : A x <= b}``.

        Rows: near, far, left, right, top, bottom.
        """
        k = self.intrinsics
        local = np.array([
            [0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0],
            [-k.fx, 0.0, -k.cx],
            [k.fx, 0.0, k.cx - k.width],
            [0.0, -k.fy, -k.cy],
            [0.0, k.fy, k.cy - k.height],
        ])
        offsets = np.array([-self.near, self.far, 0.0, 0.0, 0.0, 0.0])
        norms = np.linalg.norm(local, axis=1)
        local = local / norms[:, None]
        offsets = offsets / norms
        # a_l . R (x - c) <= b  <=>  (R^T a_l) . x <= b + (R^T a_l) . c
        A = local @ self.pose.rotation
        b = offsets + A @ self.pose.position
        return A, b

    def corners(self) -> np.ndarray:
        k = self.intrinsics
        px = np.array([[0, 0], [k.width, 0], [k.width, k.height], [0, k.height]], dtype=float)
        rays = np.column_stack([(px[:, 0] - k.cx) / k.fx, (px[:, 1] - k.cy) / k.fy, np.ones(4)])
        local = np.vstack([rays * self.near, rays * self.far])
        return local @ self.pose.rotation + self.pose.position


def _bounding_sphere(f: Frustum):
    corners = f.corners()
    center = corners.mean(axis=0)
    return center, np.max(np.linalg.norm(corners - center, axis=1))


def frustum_overlap_sphere(a: Frustum, b: Frustum) -> Tuple[float, Optional[np.ndarray]]:
    """Largest sphere inscribed in the intersection of two frusta.

    Returns ``(radius, center)``; ``(0.0, None)`` when the frusta do not overlap.
    The radius is re-evaluated at the returned center, so every one of the
    12 planes is at least ``radius`` away from it.
    """
    ca, ra = _bounding_sphere(a)
    cb, rb = _bounding_sphere(b)
    if np.linalg.norm(ca - cb) > ra + rb:
        return 0.0, None
    Aa, ba = a.halfspaces()
    Ab, bb = b.halfspaces()
    A = np.vstack([Aa, Ab])
    rhs = np.concatenate([ba, bb])
    # maximize r  s.t.  a_i . x + r <= b_i
    res = linprog(
        c=[0.0, 0.0, 0.0, -1.0],
        A_ub=np.column_stack([A, np.ones(len(A))]),
        b_ub=rhs,
        bounds=[(None, None)] * 3 + [(0.0, None)],
        method="highs",
    )
    if res.status != 0:
        return 0.0, None
    center = res.x[:3]
    radius = float(np.min(rhs - A @ center))
    if radius <= 0.0:
        return 0.0, None
    return radius, center


def frustum_overlap_radius(a: Frustum, b: Frustum) -> float:
    return frustum_overlap_sphere(a, b)[0]


def select_overlapping_pairs(
    frusta: Dict[str, Frustum],
    min_radius: float = 10.0,
    max_pairs_per_image: Optional[int] = None,
) -> List[Tuple[str, str, float]]:
    """Image pairs whose overlap radius is at least ``min_radius``.

    With ``max_pairs_per_image`` each image keeps only its largest-radius
    pairs; a pair survives if either endpoint keeps it. Output is sorted by
    radius descending, ties by the (a, b) id pair.
    """
    if min_radius < 0:
        raise ValueError("min_radius must be >= 0")
    ids = sorted(frusta)
    candidates = []
    for a, b in itertools.combinations(ids, 2):
        r = frustum_overlap_radius(frusta[a], frusta[b])
        if r >= min_radius:
            candidates.append((a, b, r))
    order = lambda t: (-t[2], t[0], t[1])  # noqa: E731
    candidates.sort(key=order)
    if max_pairs_per_image is None:
        return candidates

    kept = set()
    per_image: Dict[str, list] = {i: [] for i in ids}
    for pair in candidates:
        per_image[pair[0]].append(pair)
        per_image[pair[1]].append(pair)
    for pairs in per_image.values():
        kept.update((a, b) for a, b, _ in pairs[:max_pairs_per_image])
    return [p for p in candidates if (p[0], p[1]) in kept]
