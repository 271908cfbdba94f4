"""Benchmark driver: rankings, localization over a k grid, metrics and exports."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .approximation import ApproximationConfig, approximate_pose
from .dataio import Dataset, fmt, save_rankings, save_results
from .errors import ConfigError, MissingGroundTruth
from .geometry import Pose, pose_position_error, pose_rotation_error
from .localization import (
    SUCCESS,
    LocalizationResult,
    PointMap,
    RansacParams,
    build_global_map,
    localize_global,
    localize_local_sfm,
)
from .localization.triangulation import MIN_TRI_ANGLE_DEG
from .retrieval import DescriptorSet, Ranking, RelevanceOracle, rank_database, retrieval_metrics

logger = logging.getLogger("locbench.bench")

TASKS = ("task1-ewb", "task1-bdi", "task1-csi", "task2a", "task2b")
THRESHOLD_NAMES = ("low", "medium", "high")
DEFAULT_KGRID = (1, 2, 5, 10, 20, 50)


@dataclass(frozen=True)
class ThresholdTriple:
    """(meters, degrees) pairs; each stricter pair must be tighter on both axes."""

    low: Tuple[float, float] = (5.0, 10.0)
    medium: Tuple[float, float] = (0.5, 5.0)
    high: Tuple[float, float] = (0.25, 2.0)

    def __post_init__(self):
        pairs = [tuple(float(v) for v in getattr(self, n)) for n in THRESHOLD_NAMES]
        for name, pair in zip(THRESHOLD_NAMES, pairs):
            if len(pair) != 2 or min(pair) <= 0:
                raise ConfigError(f"threshold {name} must be two positive numbers, got {pair}")
            object.__setattr__(self, name, pair)
        for (n1, p1), (n2, p2) in zip(zip(THRESHOLD_NAMES, pairs), zip(THRESHOLD_NAMES[1:], pairs[1:])):
            if p2[0] > p1[0] or p2[1] > p1[1]:
                raise ConfigError(f"threshold {n2} {p2} must not be looser than {n1} {p1}")

    def items(self):
        return [(n, getattr(self, n)) for n in THRESHOLD_NAMES]

    @classmethod
    def parse(cls, specs: Iterable[str]) -> "ThresholdTriple":
        """From strings such as ``low=5,10 medium=0.5,5``; unnamed levels keep defaults."""
        values = {}
        for spec in specs:
            name, _, rest = spec.partition("=")
            name = name.strip()
            if name not in THRESHOLD_NAMES or not rest:
                raise ConfigError(f"bad threshold {spec!r}; expected e.g. low=5,10")
            try:
                meters, degrees = (float(v) for v in rest.split(","))
            except ValueError:
                raise ConfigError(f"bad threshold {spec!r}; expected NAME=METERS,DEGREES") from None
            values[name] = (meters, degrees)
        return cls(**values)


def parse_kgrid(text) -> Tuple[int, ...]:
    if isinstance(text, str):
        try:
            values = tuple(int(v) for v in text.split(",") if v.strip())
        except ValueError:
            raise ConfigError(f"bad k grid {text!r}; expected e.g. 1,2,5,10") from None
    else:
        values = tuple(int(v) for v in text)
    if not values or values[0] < 1 or any(b <= a for a, b in zip(values, values[1:])):
        raise ConfigError(f"k grid must be strictly increasing positive integers, got {values}")
    return values


def passes(result: LocalizationResult, truth: Pose, pair: Tuple[float, float]) -> bool:
    if not result.success or result.pose is None:
        return False
    return (pose_position_error(result.pose, truth) < pair[0]
            and pose_rotation_error(result.pose, truth) < pair[1])


def localized_within(results: Sequence[LocalizationResult], ground_truth: Mapping[str, Pose],
                     thresholds: ThresholdTriple = ThresholdTriple()) -> Dict[str, float]:
    """Percentage of results localized within each threshold pair (failures count as misses)."""
    for r in results:
        if r.query not in ground_truth:
            raise MissingGroundTruth(r.query)
    out = {}
    for name, pair in thresholds.items():
        if not results:
            out[name] = 0.0
            continue
        hits = sum(passes(r, ground_truth[r.query], pair) for r in results)
        out[name] = 100.0 * hits / len(results)
    return out


@dataclass
class BenchmarkConfig:
    tasks: Tuple[str, ...] = ("task1-ewb",)
    kgrid: Tuple[int, ...] = DEFAULT_KGRID
    thresholds: ThresholdTriple = field(default_factory=ThresholdTriple)
    seed: int = 0
    alpha: float = 8.0
    relevance: str = "iou"
    jobs: int = 1
    ransac: RansacParams = field(default_factory=RansacParams)
    min_tri_angle: float = MIN_TRI_ANGLE_DEG

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        for t in self.tasks:
            if t not in TASKS:
                raise ConfigError(f"unknown task {t!r}; choose from {', '.join(TASKS)}")
        if not self.tasks:
            raise ConfigError("no task selected")
        self.kgrid = parse_kgrid(self.kgrid)
        if self.relevance not in ("iou", "pose"):
            raise ConfigError(f"relevance must be iou or pose, got {self.relevance!r}")
        if self.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if self.alpha < 0:
            raise ConfigError("--alpha must be >= 0")


@dataclass
class BenchmarkReport:
    config: BenchmarkConfig
    rankings: Dict[str, Ranking]
    results: List[LocalizationResult]
    localization: List[dict]   # one row per (method, k)
    retrieval: List[dict]      # one row per (relevance mode, k)
    scatter: List[dict]        # one row per (method, k)


def compute_rankings(dataset: Dataset) -> Dict[str, Ranking]:
    """Full rankings (every database image) for every query."""
    database = dataset.descriptors.subset(dataset.database)
    n = len(database)
    return {q: rank_database(dataset.descriptors[q], database, n, query_id=q)
            for q in dataset.queries}


def relevance_oracles(dataset: Dataset) -> Dict[str, RelevanceOracle]:
    out = {}
    if dataset.observations is not None:
        out["iou"] = RelevanceOracle.iou(dataset.observation_sets(), database=dataset.database)
    if dataset.ground_truth:
        poses = dict(dataset.poses)
        poses.update(dataset.ground_truth)
        out["pose"] = RelevanceOracle.pose(poses, database=dataset.database)
    return out


def retrieval_table(rankings: Mapping[str, Ranking], oracles: Mapping[str, RelevanceOracle],
                    kgrid: Sequence[int]) -> List[dict]:
    rows = []
    for mode in sorted(oracles):
        for k in kgrid:
            s = retrieval_metrics(rankings.values(), oracles[mode], k)
            rows.append({"relevance": mode, "k": k, "precision": s.precision, "recall": s.recall,
                         "n_evaluated": s.n_evaluated, "n_undefined": s.n_undefined,
                         "n_short": s.n_short})
    return rows


# -- per-query work (runs in worker processes when jobs > 1) -------------------

_STATE: dict = {}


def _init_worker(dataset, rankings, config, point_map):
    _STATE.update(dataset=dataset, rankings=rankings, config=config, point_map=point_map)


def _localize_query(query: str) -> List[LocalizationResult]:
    ds: Dataset = _STATE["dataset"]
    ranking: Ranking = _STATE["rankings"][query]
    config: BenchmarkConfig = _STATE["config"]
    point_map: Optional[PointMap] = _STATE["point_map"]
    params = replace(config.ransac, seed=config.seed)
    out = []
    for task in config.tasks:
        for k in config.kgrid:
            if task.startswith("task1"):
                approx = ApproximationConfig(method=task.split("-")[1], k=k, alpha=config.alpha)
                pose = approximate_pose(ds.descriptors[query], ranking, ds.descriptors, ds.poses,
                                        approx)
                out.append(LocalizationResult(query, k, task, SUCCESS, pose))
            elif task == "task2a":
                out.append(localize_local_sfm(query, ds.keypoints[query], ds.intrinsics[query],
                                              ranking, k, ds.poses, ds.intrinsics, ds.keypoints,
                                              ds.matches, params, config.min_tri_angle))
            else:
                out.append(localize_global(query, ds.keypoints[query], ds.intrinsics[query],
                                           ranking, k, ds.matches, point_map, params))
    return out


def _check_dataset(dataset: Dataset, config: BenchmarkConfig) -> None:
    missing = [q for q in dataset.queries if q not in dataset.ground_truth]
    if missing:
        raise ConfigError(f"{len(missing)} queries lack a ground-truth pose "
                          f"(first: {missing[0]!r}); add ground_truth.txt to the dataset")
    if not dataset.database:
        raise ConfigError("dataset has no database images")
    if any(t.startswith("task2") for t in config.tasks):
        lacking = [i for i in dataset.intrinsics if i not in dataset.keypoints]
        if lacking:
            raise ConfigError(f"task2a/task2b need keypoints for every image; "
                              f"{lacking[0]!r} has none")


def run_benchmark(dataset: Dataset, config: BenchmarkConfig,
                  point_map: Optional[PointMap] = None,
                  rankings: Optional[Mapping[str, Ranking]] = None) -> BenchmarkReport:
    """Localize every query for every (task, k) and aggregate the metrics.

    Task 2b uses ``point_map`` when given, otherwise a map triangulated from
    the database-to-database matches with the known database poses.
    """
    _check_dataset(dataset, config)
    rankings = dict(rankings) if rankings is not None else compute_rankings(dataset)
    if "task2b" in config.tasks and point_map is None:
        point_map = build_global_map(dataset.poses, dataset.intrinsics, dataset.keypoints,
                                     dataset.matches, min_tri_angle=config.min_tri_angle)
        logger.info("global map: %d points from %d tracks", len(point_map), point_map.stats.tracks)

    queries = sorted(dataset.queries)
    state = (dataset, rankings, config, point_map)
    if config.jobs == 1:
        _init_worker(*state)
        per_query = [_localize_query(q) for q in queries]
        _STATE.clear()
    else:
        with ProcessPoolExecutor(max_workers=config.jobs, initializer=_init_worker,
                                 initargs=state) as pool:
            per_query = list(pool.map(_localize_query, queries))
    results = sorted((r for rs in per_query for r in rs),
                     key=lambda r: (TASKS.index(r.method), r.k, r.query))

    grouped: Dict[Tuple[str, int], List[LocalizationResult]] = {}
    for r in results:
        grouped.setdefault((r.method, r.k), []).append(r)
    localization = []
    for (method, k), rs in grouped.items():
        pct = localized_within(rs, dataset.ground_truth, config.thresholds)
        row = {"method": method, "k": k}
        row.update({f"pct_{n}": pct[n] for n in THRESHOLD_NAMES})
        row["n_queries"] = len(rs)
        row["n_success"] = sum(r.success for r in rs)
        localization.append(row)

    oracles = relevance_oracles(dataset)
    retrieval = retrieval_table(rankings, oracles, config.kgrid)
    by_k = {(row["relevance"], row["k"]): row for row in retrieval}
    scatter = []
    for row in localization:
        entry = {"method": row["method"], "k": row["k"]}
        for mode in ("iou", "pose"):
            ret = by_k.get((mode, row["k"]))
            entry[f"p_at_k_{mode}"] = ret["precision"] if ret else float("nan")
            entry[f"r_at_k_{mode}"] = ret["recall"] if ret else float("nan")
        entry.update({f"pct_{n}": row[f"pct_{n}"] for n in THRESHOLD_NAMES})
        scatter.append(entry)
    return BenchmarkReport(config, rankings, results, localization, retrieval, scatter)


# -- exports ------------------------------------------------------------------

def _cell(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else fmt(v)
    return v


def write_table(rows: Sequence[dict], path, columns: Optional[Sequence[str]] = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row[c]) for c in columns])


def _json_safe(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def summary_dict(report: BenchmarkReport) -> dict:
    cfg = report.config
    outcomes: Dict[str, Dict[str, int]] = {}
    for r in report.results:
        key = f"{r.method}@{r.k}"
        outcomes.setdefault(key, {})
        outcomes[key][r.outcome] = outcomes[key].get(r.outcome, 0) + 1
    return _json_safe({
        "config": {"tasks": list(cfg.tasks), "kgrid": list(cfg.kgrid), "seed": cfg.seed,
                   "alpha": cfg.alpha, "relevance": cfg.relevance,
                   "thresholds": {n: list(p) for n, p in cfg.thresholds.items()},
                   "ransac": asdict(cfg.ransac) | {"seed": cfg.seed}},
        "localization": report.localization,
        "retrieval": report.retrieval,
        "outcomes": outcomes,
    })


def write_report(report: BenchmarkReport, out_dir, emit_plot_data: bool = False) -> List[Path]:
    """Write results, rankings, tables and the JSON summary; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "results.csv", out / "rankings.csv", out / "localization.csv",
             out / "retrieval.csv", out / "scatter.csv", out / "summary.json"]
    save_results(report.results, paths[0])
    save_rankings(report.rankings.values(), paths[1])
    write_table(report.localization, paths[2],
                ["method", "k", "pct_low", "pct_medium", "pct_high", "n_queries", "n_success"])
    write_table(report.retrieval, paths[3],
                ["relevance", "k", "precision", "recall", "n_evaluated", "n_undefined", "n_short"])
    write_table(report.scatter, paths[4],
                ["method", "k", "p_at_k_iou", "r_at_k_iou", "p_at_k_pose", "r_at_k_pose",
                 "pct_low", "pct_medium", "pct_high"])
    paths[5].write_text(json.dumps(summary_dict(report), indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")
    if emit_plot_data:
        paths += write_plot_data(report, out / "plots")
    return paths


def write_plot_data(report: BenchmarkReport, out_dir) -> List[Path]:
    """Long-format CSVs, one per chart: retrieval vs k, localization vs k, and the
    retrieval/localization scatter."""
    out = Path(out_dir)
    primary = report.config.relevance
    retrieval_rows = [{"relevance": r["relevance"], "k": r["k"], "metric": m, "value": r[key]}
                      for r in report.retrieval for m, key in (("P@k", "precision"), ("R@k", "recall"))]
    loc_rows = [{"method": r["method"], "k": r["k"], "threshold": n, "pct_localized": r[f"pct_{n}"]}
                for r in report.localization for n in THRESHOLD_NAMES]
    scatter_rows = [{"method": r["method"], "k": r["k"], "threshold": n,
                     "r_at_k": r[f"r_at_k_{primary}"], "p_at_k": r[f"p_at_k_{primary}"],
                     "pct_localized": r[f"pct_{n}"]}
                    for r in report.scatter for n in THRESHOLD_NAMES]
    paths = [out / "retrieval_vs_k.csv", out / "localization_vs_k.csv",
             out / "retrieval_vs_localization.csv"]
    write_table(retrieval_rows, paths[0], ["relevance", "k", "metric", "value"])
    write_table(loc_rows, paths[1], ["method", "k", "threshold", "pct_localized"])
    write_table(scatter_rows, paths[2],
                ["method", "k", "threshold", "r_at_k", "p_at_k", "pct_localized"])
    return paths


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2 or np.std(x) == 0 or np.std(y) == 0:
        return float("nan")
    return float(np.corrcoef(x, y)[0, 1])
