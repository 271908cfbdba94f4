"""Seeded synthetic scenes with known geometry, matches and global descriptors.

A scene is a box of 3D points, each with a facade-like normal that limits
the directions it can be seen from, and a set of database and query cameras
arranged on a ring, a vertical grid or a corridor. Everything below is a
deterministic function of ``(spec, dmodel)``. Geometry, pixel noise, matches
and descriptors draw from independent streams, so that for example changing
the descriptor noise leaves the geometry and matches untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from .dataio import Dataset, validate
from .geometry import CameraIntrinsics, Pose, project_points
from .localization.mapping import MatchSet
from .retrieval import DescriptorSet

PATTERNS = ("ring", "grid", "corridor")
MODES = ("pose-sensitive", "pose-robust")

IMAGE_WIDTH, IMAGE_HEIGHT, FOCAL = 640, 480, 450.0
MAX_DEPTH = 50.0
MAX_VIEW_ANGLE_DEG = 75.0
NORMAL_ELEVATION_DEG = 30.0
RING_RADIUS_FACTOR = 1.5

# stream tags for SeedSequence
_GEOMETRY, _PIXELS, _MATCHES, _DESCRIPTORS = 0, 1, 2, 3


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 42
    n_points: int = 200
    extent: float = 20.0
    n_db_cameras: int = 30
    n_queries: int = 10
    pattern: str = "ring"
    pixel_noise_sigma: float = 0.5
    match_dropout: float = 0.0
    outlier_rate: float = 0.0

    def __post_init__(self):
        if self.pattern not in PATTERNS:
            raise ValueError(f"unknown trajectory pattern {self.pattern!r}")
        for name in ("n_points", "n_db_cameras", "n_queries"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("match_dropout", "outlier_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.outlier_rate >= 1.0:
            raise ValueError("outlier_rate must be < 1")
        if self.extent <= 0 or self.pixel_noise_sigma < 0:
            raise ValueError("extent must be positive and pixel noise non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(frozen=True)
class DescriptorModel:
    mode: str = "pose-sensitive"
    dimension: int = 2048
    noise_sigma: float = 0.05

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown descriptor mode {self.mode!r}")
        if self.dimension < 4:
            raise ValueError("descriptor dimension must be >= 4")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be non-negative")


@dataclass
class SyntheticScene:
    spec: SceneSpec
    dmodel: DescriptorModel
    dataset: Dataset
    points: np.ndarray                       # (n_points, 3) generating positions
    normals: np.ndarray
    visibility: Dict[str, Dict[int, int]]    # image -> {point id: keypoint id}

    @property
    def query_poses(self) -> Dict[str, Pose]:
        return self.dataset.ground_truth

    @property
    def relevance(self) -> Dict[str, Set[int]]:
        """Per image, the generated points it sees (ground truth for iou relevance)."""
        return {i: set(v) for i, v in self.visibility.items()}


def _rng(seed: int, stream: int, *extra: int) -> np.random.Generator:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, stream, *extra])
    return np.random.Generator(np.random.Philox(ss))


def default_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(IMAGE_WIDTH, IMAGE_HEIGHT, FOCAL, FOCAL,
                            IMAGE_WIDTH / 2.0, IMAGE_HEIGHT / 2.0)


# -- geometry -----------------------------------------------------------------

def _points(spec: SceneSpec, rng) -> Tuple[np.ndarray, np.ndarray]:
    half = spec.extent / 2.0
    X = rng.uniform(-half, half, size=(spec.n_points, 3))
    az = rng.uniform(0.0, 2 * np.pi, spec.n_points)
    el = np.radians(rng.uniform(-NORMAL_ELEVATION_DEG, NORMAL_ELEVATION_DEG, spec.n_points))
    normals = np.column_stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return X, normals


def _looking_at_center(centers, rng, target_jitter) -> List[Pose]:
    poses = []
    for c in centers:
        target = rng.normal(0.0, target_jitter, 3)
        poses.append(Pose.look_at(c, target))
    return poses


def _ring(spec: SceneSpec, rng) -> Tuple[List[Pose], List[Pose]]:
    radius = RING_RADIUS_FACTOR * spec.extent
    n = spec.n_db_cameras
    az = 2 * np.pi * np.arange(n) / n + rng.normal(0.0, 0.01, n)
    r = radius + rng.normal(0.0, 0.5, n)
    db = np.column_stack([r * np.cos(az), r * np.sin(az), rng.normal(0.0, 0.5, n)])
    qaz = rng.uniform(0.0, 2 * np.pi, spec.n_queries)
    qr = radius + rng.normal(0.0, 0.5, spec.n_queries)
    q = np.column_stack([qr * np.cos(qaz), qr * np.sin(qaz), rng.normal(0.0, 0.3, spec.n_queries)])
    return _looking_at_center(db, rng, 0.5), _looking_at_center(q, rng, 0.5)


def _grid(spec: SceneSpec, rng) -> Tuple[List[Pose], List[Pose]]:
    n = spec.n_db_cameras
    cols = int(math.ceil(math.sqrt(n)))
    rows = int(math.ceil(n / cols))
    y = -RING_RADIUS_FACTOR * spec.extent
    xs = np.linspace(-spec.extent, spec.extent, cols) if cols > 1 else np.zeros(1)
    zs = np.linspace(-spec.extent / 2, spec.extent / 2, rows) if rows > 1 else np.zeros(1)
    lattice = np.array([[x, y, z] for z in zs for x in xs])[:n]
    db = lattice + rng.normal(0.0, 0.3, lattice.shape)
    q = np.column_stack([rng.uniform(xs[0], xs[-1], spec.n_queries),
                         y + rng.normal(0.0, 0.5, spec.n_queries),
                         rng.uniform(zs[0], zs[-1], spec.n_queries)])
    return _looking_at_center(db, rng, 0.5), _looking_at_center(q, rng, 0.5)


def _corridor(spec: SceneSpec, rng) -> Tuple[List[Pose], List[Pose]]:
    # every camera looks straight down +y; queries sit exactly halfway between
    # two consecutive database cameras, so blending those two is exact
    n = spec.n_db_cameras
    y = -RING_RADIUS_FACTOR * spec.extent
    xs = np.linspace(-spec.extent, spec.extent, n) if n > 1 else np.zeros(1)
    db = np.column_stack([xs, np.full(n, y), np.zeros(n)])
    forward = np.array([0.0, 1.0, 0.0])
    if n > 1:
        idx = rng.choice(n - 1, spec.n_queries, replace=spec.n_queries > n - 1)
        q = 0.5 * (db[idx] + db[idx + 1])
    else:
        q = db[np.zeros(spec.n_queries, dtype=int)] + [1.0, 0.0, 0.0]
    return ([Pose.look_at(c, c + forward) for c in db],
            [Pose.look_at(c, c + forward) for c in q])


def _visible(points, normals, pose: Pose, intr: CameraIntrinsics):
    uv, depth = project_points(points, pose, intr)
    to_cam = pose.position - points
    to_cam /= np.linalg.norm(to_cam, axis=1, keepdims=True)
    facing = np.sum(to_cam * normals, axis=1) >= math.cos(math.radians(MAX_VIEW_ANGLE_DEG))
    ok = (depth > 0.1) & (depth <= MAX_DEPTH) & facing
    ok[ok] &= intr.contains(uv[ok])
    return np.flatnonzero(ok), uv


# -- descriptors --------------------------------------------------------------

COARSE_SCALE = 2.0      # in units of the camera spread
FINE_SCALE = 0.2        # in units of the scene extent
DIRECTION_SCALES = (2.0, 0.5)


def pose_features(poses: List[Pose], extent: float, dimension: int, rng) -> np.ndarray:
    """Random Fourier features of camera center and viewing direction.

    Inner products approximate an equal mixture of two Gaussian kernels on
    (position, direction), one coarse and one fine, so similarity falls off
    with Euclidean distance at every range and neighbouring cameras stay
    distinguishable. Positions are centered on the scene and divided by the
    largest coordinate magnitude.
    """
    centers = np.stack([p.position for p in poses])
    dirs = np.stack([p.viewing_direction for p in poses])
    spread = max(float(np.abs(centers).max()), 1e-9)
    z = np.hstack([centers / spread, dirs])
    fine = FINE_SCALE * extent / spread
    half = dimension // 2
    W = np.empty((dimension, 6))
    W[:half, :3] = rng.normal(size=(half, 3)) / COARSE_SCALE
    W[:half, 3:] = rng.normal(size=(half, 3)) / DIRECTION_SCALES[0]
    W[half:, :3] = rng.normal(size=(dimension - half, 3)) / fine
    W[half:, 3:] = rng.normal(size=(dimension - half, 3)) / DIRECTION_SCALES[1]
    phase = rng.uniform(0.0, 2 * np.pi, dimension)
    return math.sqrt(2.0 / dimension) * np.cos(z @ W.T + phase)


def _add_noise(signal: np.ndarray, sigma: float, rng) -> np.ndarray:
    signal = signal / np.linalg.norm(signal, axis=1, keepdims=True)
    noisy = signal + rng.normal(0.0, sigma / math.sqrt(signal.shape[1]), signal.shape)
    return noisy / np.linalg.norm(noisy, axis=1, keepdims=True)


def scene_cell(point, extent: float) -> Tuple[int, int, int]:
    """Index of the scene cell containing ``point`` (cells of size extent/4,
    one of them centered on the scene center)."""
    size = extent / 4.0
    return tuple(int(v) for v in np.floor(np.asarray(point) / size + 0.5))


def _descriptors(spec, dmodel, ids, poses, points, visible_sets) -> DescriptorSet:
    rng = _rng(spec.seed, _DESCRIPTORS)
    if dmodel.mode == "pose-sensitive":
        signal = pose_features(poses, spec.extent, dmodel.dimension, rng)
    else:
        signal = np.zeros((len(ids), dmodel.dimension))
        for row, (pose, vis) in enumerate(zip(poses, visible_sets)):
            region = points[vis].mean(axis=0) if len(vis) else pose.position
            cell = scene_cell(region, spec.extent)
            cell_rng = _rng(spec.seed, _DESCRIPTORS, *(c & 0xFFFFFFFF for c in cell))
            signal[row] = cell_rng.normal(size=dmodel.dimension)
    noisy = _add_noise(signal, dmodel.noise_sigma, rng)
    return DescriptorSet.from_matrix(ids, noisy)


# -- matches ------------------------------------------------------------------

def _matches(spec, db_ids, query_ids, visibility, n_keypoints) -> MatchSet:
    rng = _rng(spec.seed, _MATCHES)
    out = MatchSet()
    pairs = [(a, b) for i, a in enumerate(db_ids) for b in db_ids[i + 1:]]
    pairs += [(q, d) for q in query_ids for d in db_ids]
    for a, b in sorted((min(p), max(p)) for p in pairs):
        va, vb = visibility[a], visibility[b]
        shared = sorted(set(va) & set(vb))
        if not shared:
            continue
        true = np.array([(va[p], vb[p]) for p in shared], dtype=np.int64)
        keep = rng.random(len(true)) >= spec.match_dropout
        true = true[keep]
        n_out = int(round(spec.outlier_rate * len(true) / (1.0 - spec.outlier_rate)))
        wrong = []
        if n_out:
            point_a = {kp: p for p, kp in va.items()}
            point_b = {kp: p for p, kp in vb.items()}
            free_a = np.setdiff1d(np.arange(n_keypoints[a]), true[:, 0])
            free_b = np.setdiff1d(np.arange(n_keypoints[b]), true[:, 1])
            rng.shuffle(free_a)
            rng.shuffle(free_b)
            for ka, kb in zip(free_a, free_b):
                if len(wrong) == n_out:
                    break
                pa, pb = point_a.get(int(ka)), point_b.get(int(kb))
                if pa is not None and pa == pb:
                    continue
                wrong.append((ka, kb))
        m = np.vstack([true, np.array(wrong, dtype=np.int64).reshape(-1, 2)])
        if len(m):
            out.add(a, b, m[np.lexsort((m[:, 1], m[:, 0]))])
    return out


# -- assembly -----------------------------------------------------------------

def generate(spec: SceneSpec, dmodel: DescriptorModel = DescriptorModel()) -> SyntheticScene:
    geo = _rng(spec.seed, _GEOMETRY)
    points, normals = _points(spec, geo)
    db_poses, q_poses = {"ring": _ring, "grid": _grid, "corridor": _corridor}[spec.pattern](spec, geo)
    db_ids = [f"db{i:03d}" for i in range(spec.n_db_cameras)]
    query_ids = [f"query{i:03d}" for i in range(spec.n_queries)]
    ids = db_ids + query_ids
    poses = dict(zip(ids, db_poses + q_poses))
    intr = default_intrinsics()

    pix = _rng(spec.seed, _PIXELS)
    keypoints, visibility, visible_sets = {}, {}, []
    for image_id in ids:
        vis, uv = _visible(points, normals, poses[image_id], intr)
        visible_sets.append(vis)
        true_px = uv[vis] + pix.normal(0.0, spec.pixel_noise_sigma, (len(vis), 2))
        n_distract = 5 + len(vis) // 4
        distract = np.column_stack([pix.uniform(0, intr.width, n_distract),
                                    pix.uniform(0, intr.height, n_distract)])
        all_px = np.vstack([true_px, distract])
        order = pix.permutation(len(all_px))
        kp = np.empty_like(all_px)
        kp[order] = all_px
        keypoints[image_id] = kp
        visibility[image_id] = {int(p): int(order[r]) for r, p in enumerate(vis)}

    matches = _matches(spec, db_ids, query_ids, visibility,
                       {i: len(k) for i, k in keypoints.items()})
    descriptors = _descriptors(spec, dmodel, ids, [poses[i] for i in ids], points, visible_sets)

    observations: Dict[int, Set[Tuple[str, int]]] = {}
    for image_id in ids:
        for pid, kp in visibility[image_id].items():
            observations.setdefault(pid, set()).add((image_id, kp))
    points3d = {pid: points[pid].copy() for pid in sorted(observations)}
    dataset = Dataset(
        intrinsics={i: intr for i in ids},
        poses={i: poses[i] for i in db_ids},
        queries=query_ids,
        descriptors=descriptors,
        keypoints=keypoints,
        matches=matches,
        ground_truth={q: poses[q] for q in query_ids},
        observations={pid: observations[pid] for pid in sorted(observations)},
        points3d=points3d,
    )
    dataset.report = validate(dataset)
    return SyntheticScene(spec, dmodel, dataset, points, normals, visibility)


REFERENCE_SPEC = SceneSpec(seed=42, n_points=200, extent=20.0, n_db_cameras=30, n_queries=10,
                           pattern="ring", pixel_noise_sigma=0.5)


def reference_scene(dmodel: Optional[DescriptorModel] = None, **overrides) -> SyntheticScene:
    """The fixed reference configuration; keyword overrides replace spec fields."""
    spec = replace(REFERENCE_SPEC, **overrides) if overrides else REFERENCE_SPEC
    return generate(spec, dmodel or DescriptorModel())
