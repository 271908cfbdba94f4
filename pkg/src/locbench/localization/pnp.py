"""P3P minimal solver and a seeded RANSAC loop around it."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from numpy.polynomial import polynomial as P

from ..errors import RansacFailed
from ..geometry import CameraIntrinsics, Pose
from .refine import refine_pose

SAMPLE_SIZE = 4


@dataclass(frozen=True)
class RansacParams:
    inlier_threshold: float = 8.0
    confidence: float = 0.9999
    max_iterations: int = 10000
    min_inliers: int = 12
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.confidence < 1.0):
            raise ValueError("confidence must be in (0, 1)")
        if self.inlier_threshold <= 0:
            raise ValueError("inlier threshold must be positive")


def _kabsch(world: np.ndarray, cam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """R, t with cam ~ R @ world + t."""
    mw = world.mean(axis=0)
    mc = cam.mean(axis=0)
    H = (world - mw).T @ (cam - mc)
    u, _, vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    R = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return R, mc - R @ mw


def p3p(bearings, points) -> List[Tuple[np.ndarray, np.ndarray]]:
    """All poses (R, t) consistent with three bearing/point pairs.

    Grunert's distance formulation: with s2 = u s1 and s3 = v s1, the law of
    cosines gives two quadratics in u whose resultant is a quartic in v.
    """
    f = np.asarray(bearings, dtype=float)
    X = np.asarray(points, dtype=float)
    a2 = np.sum((X[1] - X[2]) ** 2)
    b2 = np.sum((X[0] - X[2]) ** 2)
    c2 = np.sum((X[0] - X[1]) ** 2)
    if min(a2, b2, c2) < 1e-18:
        return []
    ca = f[1] @ f[2]
    cb = f[0] @ f[2]
    cg = f[0] @ f[1]
    # coefficient arrays are in increasing powers of v
    A = np.array([b2])
    B1 = np.array([0.0, -2.0 * b2 * ca])
    C1 = np.array([-a2, 2.0 * a2 * cb, b2 - a2])
    B2 = np.array([-2.0 * b2 * cg])
    C2 = np.array([b2 - c2, 2.0 * c2 * cb, -c2])
    d_c = P.polysub(P.polymul(A, C2), P.polymul(A, C1))
    d_b = P.polysub(P.polymul(A, B2), P.polymul(A, B1))
    e = P.polysub(P.polymul(B1, C2), P.polymul(B2, C1))
    quartic = P.polysub(P.polymul(d_c, d_c), P.polymul(d_b, e))
    quartic = np.trim_zeros(quartic, "b")
    if len(quartic) < 2 or not np.all(np.isfinite(quartic)):
        return []
    roots = np.roots(quartic[::-1])
    deriv = P.polyder(quartic)
    solutions = []
    for root in roots:
        if abs(root.imag) > 1e-6 * max(1.0, abs(root.real)):
            continue
        v = root.real
        for _ in range(2):  # Newton polish
            dv = P.polyval(v, deriv)
            if dv == 0:
                break
            v -= P.polyval(v, quartic) / dv
        if v <= 0:
            continue
        denom = P.polyval(v, B1) - P.polyval(v, B2)
        if abs(denom) > 1e-12:
            us = [(P.polyval(v, C2) - P.polyval(v, C1)) / denom]
        else:
            # fall back to the second quadratic directly
            us = np.roots([b2, P.polyval(v, B2), P.polyval(v, C2)])
            us = [x.real for x in us if abs(x.imag) < 1e-9]
        for u in us:
            if u <= 0:
                continue
            den = 1.0 + v * v - 2.0 * v * cb
            if den <= 0:
                continue
            s1 = math.sqrt(b2 / den)
            cam = np.stack([s1 * f[0], u * s1 * f[1], v * s1 * f[2]])
            R, t = _kabsch(X, cam)
            if np.all(np.isfinite(R)) and np.all(np.isfinite(t)):
                solutions.append((R, t))
    return solutions


def reprojection_errors(R, t, points, pixels, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Pixel distances; infinite for points at or behind the camera."""
    Xc = points @ R.T + t
    z = Xc[:, 2]
    err = np.full(len(points), np.inf)
    front = z > 1e-9
    u = intrinsics.fx * Xc[front, 0] / z[front] + intrinsics.cx
    v = intrinsics.fy * Xc[front, 1] / z[front] + intrinsics.cy
    err[front] = np.hypot(u - pixels[front, 0], v - pixels[front, 1])
    return err


def _non_degenerate(points: np.ndarray) -> bool:
    scale = max(np.ptp(points, axis=0).max(), 1e-12)
    area = np.linalg.norm(np.cross(points[1] - points[0], points[2] - points[0]))
    return area > 1e-6 * scale * scale


def _required_iterations(inlier_ratio: float, confidence: float, cap: int) -> int:
    if inlier_ratio <= 0.0:
        return cap
    p_good = inlier_ratio ** SAMPLE_SIZE
    if p_good >= 1.0:
        return 1
    return min(cap, int(math.ceil(math.log(1.0 - confidence) / math.log(1.0 - p_good))))


def pnp_ransac(pixels, points, intrinsics: CameraIntrinsics,
               params: RansacParams = RansacParams()) -> Tuple[Pose, np.ndarray]:
    """Robust absolute pose from 2D-3D correspondences.

    Each hypothesis comes from P3P on three sampled correspondences, with a
    fourth sampled correspondence choosing among the P3P solutions. The best
    hypothesis is refined on its inliers and the returned mask is recomputed
    from the final pose, so every reported inlier reprojects within the
    threshold. Deterministic given ``params.seed``.
    """
    pixels = np.asarray(pixels, dtype=float).reshape(-1, 2)
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(points)
    if n < SAMPLE_SIZE:
        raise RansacFailed(f"need at least {SAMPLE_SIZE} correspondences, got {n}")
    bearings = intrinsics.bearing(pixels)
    rng = np.random.Generator(np.random.Philox(params.seed))
    thr = params.inlier_threshold

    best: Optional[Tuple[np.ndarray, np.ndarray]] = None
    best_count, best_score = 0, np.inf
    required = params.max_iterations
    iterations = attempts = 0
    while iterations < required and attempts < params.max_iterations:
        attempts += 1
        sample = rng.choice(n, SAMPLE_SIZE, replace=False)
        minimal, check = sample[:3], sample[3]
        if not _non_degenerate(points[minimal]):
            continue
        iterations += 1
        candidates = p3p(bearings[minimal], points[minimal])
        if not candidates:
            continue
        check_err = [reprojection_errors(R, t, points[check:check + 1], pixels[check:check + 1],
                                         intrinsics)[0] for R, t in candidates]
        R, t = candidates[int(np.argmin(check_err))]
        err = reprojection_errors(R, t, points, pixels, intrinsics)
        inliers = err <= thr
        count = int(inliers.sum())
        score = float(np.sum(np.minimum(err, thr)))
        if count > best_count or (count == best_count and score < best_score):
            best, best_count, best_score = (R, t), count, score
            required = _required_iterations(count / n, params.confidence, params.max_iterations)

    if best is None or best_count < params.min_inliers:
        raise RansacFailed(f"best hypothesis has {best_count} inliers, need {params.min_inliers}")

    R, t = best
    pose = Pose.from_rt(R, t)
    mask = reprojection_errors(R, t, points, pixels, intrinsics) <= thr
    for _ in range(2):
        refined = refine_pose(pose, points[mask], pixels[mask], intrinsics)
        new_mask = reprojection_errors(refined.rotation, refined.translation,
                                       points, pixels, intrinsics) <= thr
        if new_mask.sum() < mask.sum():
            break
        pose, mask = refined, new_mask
    mask = reprojection_errors(pose.rotation, pose.translation, points, pixels, intrinsics) <= thr
    if mask.sum() < params.min_inliers:
        raise RansacFailed(f"refined pose has {int(mask.sum())} inliers, need {params.min_inliers}")
    return pose, mask
