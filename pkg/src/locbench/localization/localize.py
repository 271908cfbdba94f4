"""Query registration against a global map (Task 2b) or a local map (Task 2a)."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import RansacFailed
from ..geometry import CameraIntrinsics, Pose
from ..retrieval import Ranking
from .mapping import MatchSet, PointMap, build_global_map, build_tracks
from .pnp import RansacParams, pnp_ransac
from .triangulation import MIN_TRI_ANGLE_DEG

SUCCESS = "success"
INSUFFICIENT_RELEVANT = "insufficient_relevant"
MATCHING_TOO_WEAK = "matching_too_weak"
DEGENERATE_BASELINE = "degenerate_baseline"
RANSAC_FAILED = "ransac_failed"
OUTCOMES = (SUCCESS, INSUFFICIENT_RELEVANT, MATCHING_TOO_WEAK, DEGENERATE_BASELINE, RANSAC_FAILED)

MIN_CORRESPONDENCES = 4


@dataclass(frozen=True)
class LocalizationResult:
    query: str
    k: int
    method: str
    outcome: str
    pose: Optional[Pose] = None
    inliers: int = 0
    matches: int = 0

    @property
    def success(self) -> bool:
        return self.outcome == SUCCESS


def query_seed(seed: int, query_id: str) -> int:
    """Per-query RNG seed derived from the run seed and the query id only."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF,
                                 zlib.crc32(query_id.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def gather_correspondences(query_id: str, query_keypoints: np.ndarray, ranking: Ranking, k: int,
                           matches: MatchSet, point_map: PointMap
                           ) -> Tuple[np.ndarray, np.ndarray, List[int]]:
    """2D-3D correspondences transferred through query-to-database matches.

    A query keypoint matched into several points keeps the match coming from
    the best-ranked database image.
    """
    chosen: Dict[int, int] = {}
    for db in ranking.top(k):
        for q_kp, db_kp in matches.get(query_id, db):
            pid = point_map.point_of(db, db_kp)
            if pid is not None and int(q_kp) not in chosen:
                chosen[int(q_kp)] = pid
    kps = list(chosen)
    pixels = np.asarray(query_keypoints, dtype=float)[kps].reshape(-1, 2)
    points = np.array([point_map.positions[chosen[q]] for q in kps]).reshape(-1, 3)
    return pixels, points, [chosen[q] for q in kps]


def _register(query_id, k, method, pixels, points, intrinsics, params) -> LocalizationResult:
    n = len(points)
    if n < MIN_CORRESPONDENCES:
        return LocalizationResult(query_id, k, method, MATCHING_TOO_WEAK, matches=n)
    local = replace(params, seed=query_seed(params.seed, query_id))
    try:
        pose, mask = pnp_ransac(pixels, points, intrinsics, local)
    except RansacFailed:
        return LocalizationResult(query_id, k, method, RANSAC_FAILED, matches=n)
    return LocalizationResult(query_id, k, method, SUCCESS, pose, int(mask.sum()), n)


def localize_global(query_id: str, query_keypoints: np.ndarray, query_intrinsics: CameraIntrinsics,
                    ranking: Ranking, k: int, matches: MatchSet, point_map: PointMap,
                    params: RansacParams = RansacParams(), method: str = "task2b"
                    ) -> LocalizationResult:
    pixels, points, _ = gather_correspondences(query_id, query_keypoints, ranking, k, matches,
                                               point_map)
    return _register(query_id, k, method, pixels, points, query_intrinsics, params)


def localize_local_sfm(query_id: str, query_keypoints: np.ndarray,
                       query_intrinsics: CameraIntrinsics, ranking: Ranking, k: int,
                       db_poses: Mapping[str, Pose], intrinsics: Mapping[str, CameraIntrinsics],
                       keypoints: Mapping[str, np.ndarray], matches: MatchSet,
                       params: RansacParams = RansacParams(),
                       min_tri_angle: float = MIN_TRI_ANGLE_DEG, method: str = "task2a"
                       ) -> LocalizationResult:
    """Build a map from the top-k images on the fly and register the query in it.

    Failure outcomes: fewer than two retrieved images share a multi-view
    track with the query (insufficient_relevant); fewer than four query
    keypoints reach a track (matching_too_weak); the triangulation gates
    remove the tracks the query needs (degenerate_baseline).
    """
    top = [i for i in ranking.top(k) if i in db_poses]
    if len(top) < 2:
        return LocalizationResult(query_id, k, method, INSUFFICIENT_RELEVANT)
    local_matches = matches.restrict(top)

    tracks, _ = build_tracks(local_matches, top)
    track_of = {key: t for t, track in enumerate(tracks) for key in track}
    connected, linked = set(), {}
    for db in top:
        for q_kp, db_kp in matches.get(query_id, db):
            t = track_of.get((db, int(db_kp)))
            if t is None:
                continue
            connected.add(db)
            linked.setdefault(int(q_kp), t)
    if len(connected) < 2:
        return LocalizationResult(query_id, k, method, INSUFFICIENT_RELEVANT, matches=len(linked))
    if len(linked) < MIN_CORRESPONDENCES:
        return LocalizationResult(query_id, k, method, MATCHING_TOO_WEAK, matches=len(linked))

    local_map = build_global_map(db_poses, intrinsics, keypoints, local_matches,
                                 min_tri_angle=min_tri_angle, images=top)
    pixels, points, _ = gather_correspondences(query_id, query_keypoints, ranking, k, matches,
                                               local_map)
    if len(points) < MIN_CORRESPONDENCES:
        stats = local_map.stats
        outcome = DEGENERATE_BASELINE if stats.degenerate + stats.behind > 0 else MATCHING_TOO_WEAK
        return LocalizationResult(query_id, k, method, outcome, matches=len(points))
    return _register(query_id, k, method, pixels, points, query_intrinsics, params)
