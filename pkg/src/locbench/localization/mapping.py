"""Pairwise matches, feature tracks and triangulated point maps."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..errors import BehindCamera, DegenerateBaseline
from ..geometry import CameraIntrinsics, Pose
from .triangulation import MIN_TRI_ANGLE_DEG, triangulate

MAX_REPROJECTION_ERROR = 4.0

Key = Tuple[str, int]


class MatchSet:
    """Keypoint matches per image pair, stored with the pair in canonical order."""

    def __init__(self, pairs: Optional[Mapping[Tuple[str, str], np.ndarray]] = None):
        self._pairs: Dict[Tuple[str, str], np.ndarray] = {}
        for (a, b), m in (pairs or {}).items():
            self.add(a, b, m)

    def add(self, a: str, b: str, matches) -> None:
        m = np.asarray(matches, dtype=np.int64).reshape(-1, 2)
        if a == b:
            raise ValueError(f"cannot match image {a!r} with itself")
        if a > b:
            a, b, m = b, a, m[:, ::-1]
        if len(np.unique(m[:, 0])) != len(m) or len(np.unique(m[:, 1])) != len(m):
            raise ValueError(f"matches between {a!r} and {b!r} are not one-to-one")
        m = np.ascontiguousarray(m)
        m.setflags(write=False)
        self._pairs[(a, b)] = m

    def get(self, a: str, b: str) -> np.ndarray:
        """Matches oriented as (keypoint in a, keypoint in b); empty if absent."""
        if a <= b:
            return self._pairs.get((a, b), np.zeros((0, 2), dtype=np.int64))
        m = self._pairs.get((b, a))
        if m is None:
            return np.zeros((0, 2), dtype=np.int64)
        return m[:, ::-1]

    def pairs(self) -> List[Tuple[str, str]]:
        return sorted(self._pairs)

    def items(self):
        for pair in self.pairs():
            yield pair, self._pairs[pair]

    def images(self) -> set:
        return {i for pair in self._pairs for i in pair}

    def restrict(self, images: Iterable[str]) -> "MatchSet":
        keep = set(images)
        out = MatchSet()
        out._pairs = {p: m for p, m in self._pairs.items() if p[0] in keep and p[1] in keep}
        return out

    def __contains__(self, pair):
        a, b = pair
        return (min(a, b), max(a, b)) in self._pairs

    def __len__(self):
        return len(self._pairs)

    def __eq__(self, other):
        if not isinstance(other, MatchSet) or self.pairs() != other.pairs():
            return False
        return all(np.array_equal(self._pairs[p], other._pairs[p]) for p in self._pairs)


@dataclass
class MapStats:
    tracks: int = 0
    inconsistent: int = 0
    degenerate: int = 0
    behind: int = 0
    reprojection: int = 0
    triangulated: int = 0


class PointMap:
    """3D points with their keypoint observations and a reverse index."""

    def __init__(self):
        self.positions: Dict[int, np.ndarray] = {}
        self.observations: Dict[int, FrozenSet[Key]] = {}
        self.reverse: Dict[Key, int] = {}
        self.stats = MapStats()

    def add_point(self, point_id: int, position, observations: Iterable[Key]) -> None:
        obs = frozenset((str(i), int(k)) for i, k in observations)
        if len(obs) < 2:
            raise ValueError("a map point needs at least two observations")
        if point_id in self.positions:
            raise ValueError(f"duplicate point id {point_id}")
        for key in obs:
            if key in self.reverse:
                raise ValueError(f"keypoint {key} already observes point {self.reverse[key]}")
        self.positions[point_id] = np.asarray(position, dtype=float).reshape(3)
        self.observations[point_id] = obs
        for key in obs:
            self.reverse[key] = point_id

    def __len__(self):
        return len(self.positions)

    def point_of(self, image_id: str, keypoint_id: int) -> Optional[int]:
        return self.reverse.get((image_id, int(keypoint_id)))

    def image_observations(self) -> Dict[str, set]:
        """Per image, the set of point ids it observes."""
        out: Dict[str, set] = defaultdict(set)
        for (image_id, _), pid in self.reverse.items():
            out[image_id].add(pid)
        return dict(out)

    def restrict(self, images: Iterable[str]) -> "PointMap":
        """Observations limited to ``images``; points left with < 2 are dropped."""
        keep = set(images)
        out = PointMap()
        for pid in sorted(self.positions):
            obs = [o for o in self.observations[pid] if o[0] in keep]
            if len(obs) >= 2:
                out.add_point(pid, self.positions[pid], obs)
        return out

    def check(self) -> None:
        """Assert forward observations and the reverse index are mutually consistent."""
        count = 0
        for pid, obs in self.observations.items():
            assert len(obs) >= 2
            images = [i for i, _ in obs]
            assert len(images) == len(set(images)), "point observed twice in one image"
            for key in obs:
                assert self.reverse[key] == pid
                count += 1
        assert count == len(self.reverse)


def build_tracks(matches: MatchSet, images: Optional[Iterable[str]] = None
                 ) -> Tuple[List[List[Key]], int]:
    """Connected components of the match graph.

    Returns ``(consistent_tracks, n_inconsistent)``; a track containing two
    keypoints of the same image is inconsistent and dropped. Tracks are
    sorted observation lists, ordered by their first observation.
    """
    keep = None if images is None else set(images)
    index: Dict[Key, int] = {}
    rows, cols = [], []
    for (a, b), m in matches.items():
        if keep is not None and (a not in keep or b not in keep):
            continue
        for ka, kb in m:
            ia = index.setdefault((a, int(ka)), len(index))
            ib = index.setdefault((b, int(kb)), len(index))
            rows.append(ia)
            cols.append(ib)
    if not index:
        return [], 0
    n = len(index)
    graph = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    groups: Dict[int, List[Key]] = defaultdict(list)
    for key, node in index.items():
        groups[labels[node]].append(key)
    tracks, inconsistent = [], 0
    for members in groups.values():
        counts = Counter(i for i, _ in members)
        if max(counts.values()) > 1:
            inconsistent += 1
            continue
        tracks.append(sorted(members))
    tracks.sort()
    return tracks, inconsistent


def build_global_map(db_poses: Mapping[str, Pose], intrinsics: Mapping[str, CameraIntrinsics],
                     keypoints: Mapping[str, np.ndarray], matches: MatchSet,
                     min_tri_angle: float = MIN_TRI_ANGLE_DEG,
                     max_reprojection_error: Optional[float] = MAX_REPROJECTION_ERROR,
                     images: Optional[Iterable[str]] = None) -> PointMap:
    """Triangulate every consistent track of ``matches`` using the known poses.

    Only images with a pose take part. Tracks that fail triangulation (baseline,
    cheirality, or reprojection above ``max_reprojection_error`` pixels) are
    dropped and tallied in ``PointMap.stats``.
    """
    allowed = set(db_poses) if images is None else set(images) & set(db_poses)
    tracks, inconsistent = build_tracks(matches, allowed)
    out = PointMap()
    out.stats.tracks = len(tracks)
    out.stats.inconsistent = inconsistent
    next_id = 0
    for track in tracks:
        obs = [(keypoints[i][k], db_poses[i], intrinsics[i]) for i, k in track]
        try:
            X = triangulate(obs, min_tri_angle)
        except DegenerateBaseline:
            out.stats.degenerate += 1
            continue
        except BehindCamera:
            out.stats.behind += 1
            continue
        if max_reprojection_error is not None and _max_reprojection(X, obs) > max_reprojection_error:
            out.stats.reprojection += 1
            continue
        out.add_point(next_id, X, track)
        next_id += 1
    out.stats.triangulated = len(out)
    return out


def _max_reprojection(X, observations) -> float:
    worst = 0.0
    for pixel, pose, intr in observations:
        x, y, z = pose.to_camera(X)
        u = intr.fx * x / z + intr.cx
        v = intr.fy * y / z + intr.cy
        worst = max(worst, float(np.hypot(u - pixel[0], v - pixel[1])))
    return worst
