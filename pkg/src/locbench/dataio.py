"""Dataset directory layout, text and binary formats, result files.

Layout of a dataset root::

    sensors.txt                 image_id, width, height, fx, fy, cx, cy
    trajectories.txt            image_id, qw, qx, qy, qz, tx, ty, tz   (database poses)
    ground_truth.txt            same columns, query poses (optional, evaluation only)
    queries.txt                 one query image id per line
    global_descriptors.bin/.idx
    keypoints/<image_id>.bin
    matches.txt                 image_a, image_b, keypoint_a, keypoint_b
    observations.txt            point_id, image_id, keypoint_id     (optional)
    points3d.txt                point_id, x, y, z                   (optional)

Every text file starts with ``# locbench <kind> <version>``; further ``#``
lines are comments. Floats are written with 17 significant digits.
"""

from __future__ import annotations

import csv
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from .errors import CrossRefError, MissingFile, NonUnitQuaternion, ParseError
from .geometry import CameraIntrinsics, Pose, matrix_to_quaternion, quaternion_to_matrix
from .localization.localize import OUTCOMES, LocalizationResult
from .localization.mapping import MatchSet, PointMap
from .retrieval import DescriptorSet, Ranking, normalize_all

logger = logging.getLogger("locbench.dataio")

FORMAT_VERSION = 1
DESCRIPTOR_MAGIC = b"LBGD"
KEYPOINT_MAGIC = b"LBKP"
_DESC_HEADER = struct.Struct("<4sIIQ")
_KP_HEADER = struct.Struct("<4sIQ")
QUATERNION_TOLERANCE = 1e-3

RESULT_COLUMNS = ["query", "method", "k", "outcome", "qw", "qx", "qy", "qz",
                  "tx", "ty", "tz", "inliers", "matches"]


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


# -- text files ---------------------------------------------------------------

def write_text(path, kind: str, columns: Sequence[str], rows: Iterable[Sequence]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# locbench {kind} {FORMAT_VERSION}", "# " + ", ".join(columns)]
    for row in rows:
        lines.append(", ".join(str(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_text(path, kind: str, n_fields: Optional[int]) -> List[Tuple[int, List[str]]]:
    """(line number, fields) for every data line; checks the header."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ParseError(path, 1, "empty file (no header)")
    header = lines[0].split()
    if len(header) != 4 or header[:2] != ["#", "locbench"] or header[2] != kind:
        raise ParseError(path, 1, f"expected header '# locbench {kind} <version>'")
    if header[3] != str(FORMAT_VERSION):
        raise ParseError(path, 1, f"unsupported {kind} version {header[3]!r}")
    out = []
    for lineno, line in enumerate(lines[1:], start=2):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if n_fields is not None and len(fields) != n_fields:
            raise ParseError(path, lineno, f"expected {n_fields} fields, got {len(fields)}")
        out.append((lineno, fields))
    return out


def _float(path, lineno, value) -> float:
    try:
        x = float(value)
    except ValueError:
        raise ParseError(path, lineno, f"not a number: {value!r}") from None
    if not np.isfinite(x):
        raise ParseError(path, lineno, f"non-finite value {value!r}")
    return x


def _int(path, lineno, value) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(path, lineno, f"not an integer: {value!r}") from None


def _image_id(path, lineno, value) -> str:
    if not value:
        raise ParseError(path, lineno, "empty image id")
    return value


def save_sensors(path, intrinsics: Dict[str, CameraIntrinsics]) -> None:
    rows = ([i, k.width, k.height, fmt(k.fx), fmt(k.fy), fmt(k.cx), fmt(k.cy)]
            for i, k in sorted(intrinsics.items()))
    write_text(path, "sensors", ["image_id", "width", "height", "fx", "fy", "cx", "cy"], rows)


def load_sensors(path) -> Dict[str, CameraIntrinsics]:
    out = {}
    for lineno, f in read_text(path, "sensors", 7):
        image_id = _image_id(path, lineno, f[0])
        if image_id in out:
            raise ParseError(path, lineno, f"duplicate image {image_id!r}")
        try:
            out[image_id] = CameraIntrinsics(_int(path, lineno, f[1]), _int(path, lineno, f[2]),
                                             *(_float(path, lineno, v) for v in f[3:]))
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return out


def save_poses(path, poses: Dict[str, Pose], kind: str = "trajectories") -> None:
    rows = ([i, *(fmt(v) for v in p.orientation), *(fmt(v) for v in p.position)]
            for i, p in sorted(poses.items()))
    write_text(path, kind, ["image_id", "qw", "qx", "qy", "qz", "tx", "ty", "tz"], rows)


def load_poses(path, kind: str = "trajectories", convention: str = "center") -> Dict[str, Pose]:
    """Poses keyed by image id.

    ``convention="center"`` reads (tx, ty, tz) as the camera center;
    ``"rt"`` reads it as the translation of ``x_cam = R x_world + t``.
    Quaternions within 1e-3 of unit norm are renormalized, others rejected.
    """
    if convention not in ("center", "rt"):
        raise ValueError(f"unknown pose convention {convention!r}")
    out = {}
    for lineno, f in read_text(path, kind, 8):
        image_id = _image_id(path, lineno, f[0])
        if image_id in out:
            raise ParseError(path, lineno, f"duplicate pose for {image_id!r}")
        q = np.array([_float(path, lineno, v) for v in f[1:5]])
        t = np.array([_float(path, lineno, v) for v in f[5:8]])
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > QUATERNION_TOLERANCE:
            raise NonUnitQuaternion(f"{path}:{lineno}: quaternion norm {norm:.6g} for {image_id!r}")
        if convention == "rt":
            R = quaternion_to_matrix(q / norm)
            out[image_id] = Pose(-R.T @ t, q)
        else:
            out[image_id] = Pose(t, q)
    return out


def save_queries(path, queries: Sequence[str]) -> None:
    write_text(path, "queries", ["image_id"], ([q] for q in queries))


def load_queries(path) -> List[str]:
    out = []
    for lineno, f in read_text(path, "queries", 1):
        out.append(_image_id(path, lineno, f[0]))
    if len(set(out)) != len(out):
        raise ParseError(path, 0, "duplicate query ids")
    return out


def save_matches(path, matches: MatchSet) -> None:
    rows = ([a, b, int(ka), int(kb)] for (a, b), m in matches.items() for ka, kb in m)
    write_text(path, "matches", ["image_a", "image_b", "keypoint_a", "keypoint_b"], rows)


def load_matches(path) -> MatchSet:
    grouped: Dict[Tuple[str, str], list] = defaultdict(list)
    first_line = {}
    for lineno, f in read_text(path, "matches", 4):
        a, b = _image_id(path, lineno, f[0]), _image_id(path, lineno, f[1])
        ka, kb = _int(path, lineno, f[2]), _int(path, lineno, f[3])
        if a > b:
            a, b, ka, kb = b, a, kb, ka
        grouped[(a, b)].append((ka, kb))
        first_line.setdefault((a, b), lineno)
    out = MatchSet()
    for pair, m in grouped.items():
        try:
            out.add(pair[0], pair[1], m)
        except ValueError as exc:
            raise ParseError(path, first_line[pair], str(exc)) from None
    return out


def save_points(path, points3d: Dict[int, np.ndarray]) -> None:
    rows = ([pid, *(fmt(v) for v in xyz)] for pid, xyz in sorted(points3d.items()))
    write_text(path, "points3d", ["point_id", "x", "y", "z"], rows)


def load_points(path) -> Dict[int, np.ndarray]:
    out = {}
    for lineno, f in read_text(path, "points3d", 4):
        pid = _int(path, lineno, f[0])
        if pid in out:
            raise ParseError(path, lineno, f"duplicate point {pid}")
        out[pid] = np.array([_float(path, lineno, v) for v in f[1:]])
    return out


def save_observations(path, observations: Dict[int, Set[Tuple[str, int]]]) -> None:
    rows = ([pid, img, kp] for pid, obs in sorted(observations.items()) for img, kp in sorted(obs))
    write_text(path, "observations", ["point_id", "image_id", "keypoint_id"], rows)


def load_observations(path) -> Dict[int, Set[Tuple[str, int]]]:
    out: Dict[int, Set[Tuple[str, int]]] = defaultdict(set)
    for lineno, f in read_text(path, "observations", 3):
        out[_int(path, lineno, f[0])].add((_image_id(path, lineno, f[1]), _int(path, lineno, f[2])))
    return dict(out)


# -- binary files -------------------------------------------------------------

def save_descriptors(bin_path, descriptors: DescriptorSet) -> None:
    bin_path = Path(bin_path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(descriptors.matrix, dtype="<f4")
    with open(bin_path, "wb") as fh:
        fh.write(_DESC_HEADER.pack(DESCRIPTOR_MAGIC, FORMAT_VERSION, descriptors.dimension,
                                   len(descriptors)))
        fh.write(data.tobytes())
    idx = bin_path.with_suffix(".idx")
    idx.write_text("".join(f"{i}\n" for i in descriptors.ids), encoding="utf-8")


def load_descriptors(bin_path) -> DescriptorSet:
    bin_path = Path(bin_path)
    idx = bin_path.with_suffix(".idx")
    for p in (bin_path, idx):
        if not p.is_file():
            raise MissingFile(f"missing file {p}")
    raw = bin_path.read_bytes()
    if len(raw) < _DESC_HEADER.size:
        raise ParseError(bin_path, 0, "truncated header")
    magic, version, dim, count = _DESC_HEADER.unpack_from(raw)
    if magic != DESCRIPTOR_MAGIC:
        raise ParseError(bin_path, 0, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseError(bin_path, 0, f"unsupported descriptor version {version}")
    expected = _DESC_HEADER.size + 4 * dim * count
    if len(raw) != expected:
        raise ParseError(bin_path, 0, f"expected {expected} bytes, got {len(raw)}")
    matrix = np.frombuffer(raw, dtype="<f4", offset=_DESC_HEADER.size).reshape(count, dim)
    ids = idx.read_text(encoding="utf-8").splitlines()
    if len(ids) != count:
        raise ParseError(idx, len(ids), f"{len(ids)} ids for {count} descriptor rows")
    if len(set(ids)) != len(ids):
        raise ParseError(idx, 0, "duplicate image ids")
    return DescriptorSet.from_matrix(ids, matrix.astype(np.float64))


def keypoint_path(root, image_id: str) -> Path:
    parts = image_id.split("/")
    if any(p in ("", ".", "..") for p in parts):
        raise CrossRefError(image_id, "image id is not a safe relative path")
    return Path(root) / "keypoints" / Path(*parts[:-1], parts[-1] + ".bin")


def save_keypoints(path, keypoints) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    kp = np.ascontiguousarray(np.asarray(keypoints).reshape(-1, 2), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_KP_HEADER.pack(KEYPOINT_MAGIC, FORMAT_VERSION, len(kp)))
        fh.write(kp.tobytes())


def load_keypoints(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file {path}")
    raw = path.read_bytes()
    if len(raw) < _KP_HEADER.size:
        raise ParseError(path, 0, "truncated header")
    magic, version, count = _KP_HEADER.unpack_from(raw)
    if magic != KEYPOINT_MAGIC:
        raise ParseError(path, 0, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise ParseError(path, 0, f"unsupported keypoint version {version}")
    if len(raw) != _KP_HEADER.size + 8 * count:
        raise ParseError(path, 0, "keypoint count does not match file size")
    kp = np.frombuffer(raw, dtype="<f4", offset=_KP_HEADER.size).reshape(count, 2)
    if not np.all(np.isfinite(kp)):
        raise ParseError(path, 0, "non-finite keypoint coordinates")
    return kp.astype(np.float64)


# -- dataset bundle -----------------------------------------------------------

@dataclass
class ValidationReport:
    warnings: List[str] = field(default_factory=list)
    queries_without_ground_truth: List[str] = field(default_factory=list)


@dataclass
class Dataset:
    intrinsics: Dict[str, CameraIntrinsics]
    poses: Dict[str, Pose]
    queries: List[str]
    descriptors: DescriptorSet
    keypoints: Dict[str, np.ndarray]
    matches: MatchSet
    ground_truth: Dict[str, Pose] = field(default_factory=dict)
    observations: Optional[Dict[int, Set[Tuple[str, int]]]] = None
    points3d: Optional[Dict[int, np.ndarray]] = None
    report: ValidationReport = field(default_factory=ValidationReport)

    @property
    def database(self) -> List[str]:
        qs = set(self.queries)
        return sorted(i for i in self.intrinsics if i not in qs)

    def observation_sets(self) -> Dict[str, Set[int]]:
        """Per image, the ids of the 3D points it observes."""
        out: Dict[str, Set[int]] = defaultdict(set)
        for pid, obs in (self.observations or {}).items():
            for image_id, _ in obs:
                out[image_id].add(pid)
        return dict(out)


def validate(ds: Dataset) -> ValidationReport:
    """Cross-reference checks; raises CrossRefError, returns warnings otherwise."""
    report = ValidationReport()
    declared = set(ds.intrinsics)
    queries = set(ds.queries)
    for q in ds.queries:
        if q not in declared:
            raise CrossRefError(q, "query not declared in sensors.txt")
    for image_id in list(ds.poses) + list(ds.ground_truth) + list(ds.descriptors.ids) + list(ds.keypoints):
        if image_id not in declared:
            raise CrossRefError(image_id, "image not declared in sensors.txt")
    for image_id in ds.poses:
        if image_id in queries:
            raise CrossRefError(image_id, "query pose found in trajectories.txt")
    for image_id in ds.database:
        if image_id not in ds.poses:
            raise CrossRefError(image_id, "database image without pose")
    for image_id in declared:
        if image_id not in ds.descriptors:
            raise CrossRefError(image_id, "image without global descriptor")
    for (a, b), m in ds.matches.items():
        for image_id, col in ((a, 0), (b, 1)):
            if image_id not in declared:
                raise CrossRefError(image_id, "matched image not declared in sensors.txt")
            if image_id not in ds.keypoints:
                raise CrossRefError(image_id, "matched image without keypoints")
            if len(m) and (m[:, col].min() < 0 or m[:, col].max() >= len(ds.keypoints[image_id])):
                raise CrossRefError(image_id, "match references a missing keypoint")
    if ds.observations is not None:
        for pid, obs in ds.observations.items():
            if ds.points3d is not None and pid not in ds.points3d:
                raise CrossRefError(str(pid), "observed point missing from points3d.txt")
            for image_id, kp in obs:
                if image_id not in declared:
                    raise CrossRefError(image_id, "observation of undeclared image")
                if image_id in ds.keypoints and not 0 <= kp < len(ds.keypoints[image_id]):
                    raise CrossRefError(image_id, "observation references a missing keypoint")
        seen = set(ds.observation_sets())
        report.queries_without_ground_truth = sorted(q for q in ds.queries if q not in seen)
    for q in ds.queries:
        if ds.ground_truth and q not in ds.ground_truth:
            report.warnings.append(f"query {q!r} has no ground-truth pose")
    for q in report.queries_without_ground_truth:
        report.warnings.append(f"query {q!r} observes no 3D point (ignored by iou relevance)")
    return report


def load_dataset(root, normalize_descriptors: bool = True, pose_convention: str = "center") -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise MissingFile(f"dataset root {root} does not exist")
    intrinsics = load_sensors(root / "sensors.txt")
    poses = load_poses(root / "trajectories.txt", convention=pose_convention)
    gt_path = root / "ground_truth.txt"
    ground_truth = (load_poses(gt_path, kind="ground_truth", convention=pose_convention)
                    if gt_path.exists() else {})
    queries = load_queries(root / "queries.txt")
    descriptors = load_descriptors(root / "global_descriptors.bin")
    if normalize_descriptors:
        descriptors = normalize_all(descriptors)
    matches = load_matches(root / "matches.txt")
    keypoints = {}
    for image_id in sorted(intrinsics):
        path = keypoint_path(root, image_id)
        if path.exists():
            keypoints[image_id] = load_keypoints(path)
    observations = points3d = None
    if (root / "observations.txt").exists():
        observations = load_observations(root / "observations.txt")
    if (root / "points3d.txt").exists():
        points3d = load_points(root / "points3d.txt")
    ds = Dataset(intrinsics, poses, queries, descriptors, keypoints, matches, ground_truth,
                 observations, points3d)
    ds.report = validate(ds)
    for w in ds.report.warnings:
        logger.warning(w)
    return ds


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    save_sensors(root / "sensors.txt", ds.intrinsics)
    save_poses(root / "trajectories.txt", ds.poses)
    if ds.ground_truth:
        save_poses(root / "ground_truth.txt", ds.ground_truth, kind="ground_truth")
    save_queries(root / "queries.txt", ds.queries)
    save_descriptors(root / "global_descriptors.bin", ds.descriptors)
    save_matches(root / "matches.txt", ds.matches)
    for image_id, kp in sorted(ds.keypoints.items()):
        save_keypoints(keypoint_path(root, image_id), kp)
    if ds.observations is not None:
        save_observations(root / "observations.txt", ds.observations)
    if ds.points3d is not None:
        save_points(root / "points3d.txt", ds.points3d)


# -- results and rankings -------------------------------------------------------

def save_results(results: Iterable[LocalizationResult], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            if r.pose is not None:
                pose = [fmt(v) for v in r.pose.orientation] + [fmt(v) for v in r.pose.position]
            else:
                pose = [""] * 7
            writer.writerow([r.query, r.method, r.k, r.outcome, *pose, r.inliers, r.matches])


def load_results(path) -> List[LocalizationResult]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file {path}")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != RESULT_COLUMNS:
            raise ParseError(path, 1, "unexpected results header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(RESULT_COLUMNS):
                raise ParseError(path, lineno, "wrong number of columns")
            query, method, k, outcome = row[:4]
            if outcome not in OUTCOMES:
                raise ParseError(path, lineno, f"unknown outcome {outcome!r}")
            pose = None
            if row[4]:
                q = [_float(path, lineno, v) for v in row[4:8]]
                c = [_float(path, lineno, v) for v in row[8:11]]
                pose = Pose(c, q)
            out.append(LocalizationResult(query=query, k=_int(path, lineno, k), method=method,
                                          outcome=outcome, pose=pose,
                                          inliers=_int(path, lineno, row[11]),
                                          matches=_int(path, lineno, row[12])))
    return out


def save_rankings(rankings: Iterable[Ranking], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["query", "rank", "db_image", "score"])
        for r in sorted(rankings, key=lambda r: r.query):
            for rank, (db, score) in enumerate(r.items, start=1):
                writer.writerow([r.query, rank, db, fmt(score)])


def load_rankings(path) -> Dict[str, Ranking]:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"missing file {path}")
    items: Dict[str, list] = defaultdict(list)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != ["query", "rank", "db_image", "score"]:
            raise ParseError(path, 1, "unexpected rankings header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ParseError(path, lineno, "wrong number of columns")
            items[row[0]].append((_int(path, lineno, row[1]), row[2], _float(path, lineno, row[3])))
    out = {}
    for query, rows in items.items():
        rows.sort()
        out[query] = Ranking(query, tuple((db, score) for _, db, score in rows))
    return out


# -- point maps ---------------------------------------------------------------

def save_point_map(point_map: PointMap, out_dir) -> None:
    """A map directory holds points3d.txt and observations.txt in the dataset formats."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_points(out / "points3d.txt", point_map.positions)
    save_observations(out / "observations.txt",
                      {pid: set(obs) for pid, obs in point_map.observations.items()})


def load_point_map(map_dir) -> PointMap:
    root = Path(map_dir)
    points = load_points(root / "points3d.txt")
    observations = load_observations(root / "observations.txt")
    out = PointMap()
    for pid in sorted(observations):
        if pid not in points:
            raise CrossRefError(str(pid), "observed point missing from points3d.txt")
        try:
            out.add_point(pid, points[pid], observations[pid])
        except ValueError as exc:
            raise ParseError(root / "observations.txt", 0, f"point {pid}: {exc}") from None
    out.stats.triangulated = len(out)
    return out
