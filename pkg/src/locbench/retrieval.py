"""Global-descriptor ranking, ground-truth relevance and P@k / R@k."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import DimensionMismatch, EmptyDatabase, ZeroDescriptor
from .geometry import Pose, pose_position_error, pose_rotation_error

POSE_DIST_THRESHOLD = 25.0
POSE_ANGLE_THRESHOLD = 45.0
TIE_TOLERANCE = 1e-12


class DescriptorSet:
    """Fixed-dimension global descriptors keyed by image id.

    Rows are kept sorted by image id so that a stable sort over scores breaks
    ties lexicographically.
    """

    def __init__(self, entries: Mapping[str, Sequence[float]], dimension: Optional[int] = None):
        ids = sorted(entries)
        if dimension is None:
            if not ids:
                raise ValueError("cannot infer the dimension of an empty descriptor set")
            dimension = len(entries[ids[0]])
        if dimension < 1:
            raise ValueError("descriptor dimension must be >= 1")
        matrix = np.zeros((len(ids), dimension))
        for row, image_id in enumerate(ids):
            vec = np.asarray(entries[image_id], dtype=float).reshape(-1)
            if len(vec) != dimension:
                raise DimensionMismatch(
                    f"{image_id!r} has dimension {len(vec)}, expected {dimension}")
            matrix[row] = vec
        matrix.setflags(write=False)
        self.dimension = dimension
        self.ids: Tuple[str, ...] = tuple(ids)
        self.matrix = matrix
        self._index = {image_id: row for row, image_id in enumerate(ids)}

    @classmethod
    def from_matrix(cls, ids: Sequence[str], matrix) -> "DescriptorSet":
        matrix = np.asarray(matrix, dtype=float)
        return cls({i: matrix[r] for r, i in enumerate(ids)}, dimension=matrix.shape[1])

    def __len__(self):
        return len(self.ids)

    def __contains__(self, image_id):
        return image_id in self._index

    def __getitem__(self, image_id) -> np.ndarray:
        return self.matrix[self._index[image_id]]

    def subset(self, ids: Iterable[str]) -> "DescriptorSet":
        ids = list(ids)
        return DescriptorSet({i: self[i] for i in ids}, dimension=self.dimension)

    def items(self):
        return ((i, self.matrix[r]) for r, i in enumerate(self.ids))


def normalize_vector(vec, image_id="<query>") -> np.ndarray:
    vec = np.asarray(vec, dtype=float)
    n = np.linalg.norm(vec)
    if n < 1e-12:
        raise ZeroDescriptor(image_id)
    return vec / n


def normalize_all(descriptors: DescriptorSet) -> DescriptorSet:
    norms = np.linalg.norm(descriptors.matrix, axis=1)
    for image_id, n in zip(descriptors.ids, norms):
        if n < 1e-12:
            raise ZeroDescriptor(image_id)
    return DescriptorSet.from_matrix(descriptors.ids, descriptors.matrix / norms[:, None])


@dataclass(frozen=True)
class Ranking:
    query: str
    items: Tuple[Tuple[str, float], ...]

    @property
    def ids(self) -> List[str]:
        return [i for i, _ in self.items]

    def top(self, k: int) -> List[str]:
        return [i for i, _ in self.items[:k]]

    def __len__(self):
        return len(self.items)


def rank_database(query, database: DescriptorSet, k: int, query_id: str = "<query>") -> Ranking:
    """Top-k database images by cosine similarity (exhaustive scan).

    Ties, including scores within ``TIE_TOLERANCE`` of each other, are broken
    by image id.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(database) == 0:
        raise EmptyDatabase("database has no descriptors")
    q = np.asarray(query, dtype=float).reshape(-1)
    if len(q) != database.dimension:
        raise DimensionMismatch(f"query dimension {len(q)} != database dimension {database.dimension}")
    q = normalize_vector(q, query_id)
    db = database.matrix / np.linalg.norm(database.matrix, axis=1, keepdims=True)
    scores = db @ q
    order = np.argsort(-scores, kind="stable")
    ranked = scores[order]
    # scores that differ only by rounding count as ties, ordered by id; rows
    # are already in id order, and each tied run reports its largest score
    breaks = np.flatnonzero(ranked[:-1] - ranked[1:] > TIE_TOLERANCE) + 1
    items = []
    for run, top in zip(np.split(order, breaks), np.split(ranked, breaks)):
        items.extend((database.ids[i], float(top[0])) for i in np.sort(run))
        if len(items) >= k:
            break
    return Ranking(query_id, tuple(items[:k]))


def iou_relevance(a: Set, b: Set) -> float:
    union = len(a | b)
    if union == 0:
        return 0.0
    return len(a & b) / union


def pose_relevance(query: Pose, db: Pose,
                   dist_thresh: float = POSE_DIST_THRESHOLD,
                   angle_thresh: float = POSE_ANGLE_THRESHOLD) -> bool:
    return (pose_position_error(query, db) <= dist_thresh
            and pose_rotation_error(query, db) <= angle_thresh)


class RelevanceOracle:
    """Ground-truth relevance of (query, database image) pairs.

    ``mode="iou"`` uses per-image sets of observed 3D point ids: a pair is
    relevant when the sets intersect. ``mode="pose"`` uses camera poses with
    distance and angle thresholds.
    """

    def __init__(self, mode: str, observations: Optional[Mapping[str, Set]] = None,
                 poses: Optional[Mapping[str, Pose]] = None,
                 dist_thresh: float = POSE_DIST_THRESHOLD,
                 angle_thresh: float = POSE_ANGLE_THRESHOLD,
                 database: Optional[Iterable[str]] = None):
        if mode not in ("iou", "pose"):
            raise ValueError(f"unknown relevance mode {mode!r}")
        if mode == "iou" and observations is None:
            raise ValueError("iou relevance needs observation sets")
        if mode == "pose" and poses is None:
            raise ValueError("pose relevance needs poses")
        self.mode = mode
        self.observations = {k: frozenset(v) for k, v in (observations or {}).items()}
        self.poses = dict(poses or {})
        self.dist_thresh = dist_thresh
        self.angle_thresh = angle_thresh
        self.database = None if database is None else tuple(sorted(database))

    @classmethod
    def iou(cls, observations: Mapping[str, Set], database=None) -> "RelevanceOracle":
        return cls("iou", observations=observations, database=database)

    @classmethod
    def pose(cls, poses: Mapping[str, Pose], dist_thresh=POSE_DIST_THRESHOLD,
             angle_thresh=POSE_ANGLE_THRESHOLD, database=None) -> "RelevanceOracle":
        return cls("pose", poses=poses, dist_thresh=dist_thresh, angle_thresh=angle_thresh,
                   database=database)

    def has_ground_truth(self, query: str) -> bool:
        """Whether the query can be evaluated at all.

        With a known database this means at least one database image is
        relevant; otherwise the query must have observations (iou) or a pose.
        """
        if self.mode == "iou" and not self.observations.get(query):
            return False
        if self.mode == "pose" and query not in self.poses:
            return False
        if self.database is None:
            return True
        return any(self.is_relevant(query, db) for db in self.database)

    def score(self, query: str, db: str) -> float:
        if self.mode == "iou":
            return iou_relevance(self.observations.get(query, frozenset()),
                                 self.observations.get(db, frozenset()))
        return 1.0 if self.is_relevant(query, db) else 0.0

    def is_relevant(self, query: str, db: str) -> bool:
        if self.mode == "iou":
            return self.score(query, db) > 0.0
        if query not in self.poses or db not in self.poses:
            return False
        return pose_relevance(self.poses[query], self.poses[db], self.dist_thresh, self.angle_thresh)

    def pattern(self, ranking: Ranking, k: Optional[int] = None) -> List[bool]:
        ids = ranking.ids if k is None else ranking.top(k)
        return [self.is_relevant(ranking.query, db) for db in ids]


def precision_at_k(ranking: Ranking, oracle: RelevanceOracle, k: int) -> float:
    """Fraction of the top k that is relevant (over the available items if fewer than k)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    hits = oracle.pattern(ranking, k)
    if not hits:
        return 0.0
    return sum(hits) / len(hits)


def recall_at_k(ranking: Ranking, oracle: RelevanceOracle, k: int) -> int:
    """1 if any of the top k is relevant, else 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(oracle.pattern(ranking, k)))


@dataclass
class RetrievalSummary:
    k: int
    precision: float
    recall: float
    n_evaluated: int
    n_undefined: int
    n_short: int
    undefined_queries: List[str] = field(default_factory=list)


def retrieval_metrics(rankings: Iterable[Ranking], oracle: RelevanceOracle, k: int) -> RetrievalSummary:
    """Mean P@k and R@k over the queries that have ground truth.

    Queries without ground truth are counted in ``n_undefined`` and left out
    of both means; rankings shorter than k are counted in ``n_short``.
    """
    precisions, recalls, undefined = [], [], []
    short = 0
    for ranking in sorted(rankings, key=lambda r: r.query):
        if not oracle.has_ground_truth(ranking.query):
            undefined.append(ranking.query)
            continue
        if len(ranking) < k:
            short += 1
        precisions.append(precision_at_k(ranking, oracle, k))
        recalls.append(recall_at_k(ranking, oracle, k))
    mean = lambda xs: math.fsum(xs) / len(xs) if xs else float("nan")  # noqa: E731
    return RetrievalSummary(k, mean(precisions), mean(recalls), len(precisions),
                            len(undefined), short, undefined)
