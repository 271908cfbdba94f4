"""Task 1: approximate a query pose from the poses of its top-k retrieved images."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, MissingPose, NotNormalized
from .geometry import Pose, blend_poses
from .retrieval import DescriptorSet, Ranking, normalize_vector

METHODS = ("ewb", "bdi", "csi")


@dataclass(frozen=True)
class ApproximationConfig:
    method: str = "ewb"
    k: int = 1
    alpha: float = 8.0
    bdi_regularization: float = 1e-8
    csi_similarity_floor: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not np.isfinite(self.alpha) or self.alpha < 0:
            raise ValueError("alpha must be finite and >= 0")


def weights_ewb(k: int) -> np.ndarray:
    if k < 1:
        raise ValueError("k must be >= 1")
    return np.full(k, 1.0 / k)


def weights_bdi(query, db: Sequence, regularization: float = 1e-8) -> np.ndarray:
    """Affine weights whose descriptor combination best matches the query.

    Minimizes ``||d_q - D w||^2 + lam ||w||^2`` subject to ``sum(w) = 1`` via
    its KKT system. Weights may be negative.
    """
    D = np.atleast_2d(np.asarray(db, dtype=float))
    q = np.asarray(query, dtype=float).reshape(-1)
    if D.shape[1] != len(q):
        raise DimensionMismatch(f"query dimension {len(q)} != database dimension {D.shape[1]}")
    k = len(D)
    if k == 1:
        return np.ones(1)
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2.0 * (D @ D.T + regularization * np.eye(k))
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([2.0 * D @ q, [1.0]])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    w = sol[:k]
    return w + (1.0 - w.sum()) / k


def weights_csi(query, db: Sequence, alpha: float = 8.0, similarity_floor: float = 0.0) -> np.ndarray:
    """Weights proportional to ``max(cos_sim, floor) ** alpha``."""
    D = np.atleast_2d(np.asarray(db, dtype=float))
    q = np.asarray(query, dtype=float).reshape(-1)
    if D.shape[1] != len(q):
        raise DimensionMismatch(f"query dimension {len(q)} != database dimension {D.shape[1]}")
    if abs(np.linalg.norm(q) - 1.0) > 1e-6 or np.any(np.abs(np.linalg.norm(D, axis=1) - 1.0) > 1e-6):
        raise NotNormalized("CSI weights need L2-normalized descriptors")
    k = len(D)
    if alpha == 0:
        return weights_ewb(k)
    s = np.maximum(D @ q, similarity_floor)
    positive = s > 0
    if not positive.any():
        return weights_ewb(k)
    # log domain keeps large exponents from underflowing
    logs = np.full(k, -np.inf)
    logs[positive] = alpha * np.log(s[positive])
    w = np.exp(logs - logs.max())
    return w / w.sum()


def approximation_weights(query, db: Sequence, config: ApproximationConfig) -> np.ndarray:
    k = len(db)
    if config.method == "ewb":
        return weights_ewb(k)
    if config.method == "bdi":
        return weights_bdi(query, db, config.bdi_regularization)
    return weights_csi(query, db, config.alpha, config.csi_similarity_floor)


def approximate_pose(query, ranking: Ranking, db_descriptors: DescriptorSet,
                     db_poses: Mapping[str, Pose], config: ApproximationConfig) -> Pose:
    """Blend the poses of the top-k retrieved images.

    Uses all retrieved images when fewer than ``config.k`` are available
    (see :func:`effective_k`).
    """
    if len(ranking) == 0:
        raise ValueError(f"empty ranking for query {ranking.query!r}")
    ids = ranking.top(config.k)
    for image_id in ids:
        if image_id not in db_poses:
            raise MissingPose(image_id)
    poses = [db_poses[i] for i in ids]
    if len(ids) == 1:
        return poses[0]
    q = normalize_vector(query, ranking.query)
    D = np.stack([normalize_vector(db_descriptors[i], i) for i in ids])
    weights = approximation_weights(q, D, config)
    return blend_poses(poses, weights)


def effective_k(ranking: Ranking, k: int) -> int:
    return min(k, len(ranking))
