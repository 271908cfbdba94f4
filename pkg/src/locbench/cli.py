"""``locbench`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import dataio
from .bench import (
    DEFAULT_KGRID,
    THRESHOLD_NAMES,
    BenchmarkConfig,
    ThresholdTriple,
    compute_rankings,
    localized_within,
    parse_kgrid,
    relevance_oracles,
    retrieval_table,
    run_benchmark,
    write_report,
    write_table,
)
from .errors import ConfigError, DataError, LocbenchError, MissingGroundTruth
from .frustum import DEFAULT_FAR, DEFAULT_NEAR, Frustum, select_overlapping_pairs
from .localization import RansacParams, build_global_map
from .retrieval import Ranking
from .synthetic import MODES, PATTERNS, DescriptorModel, SceneSpec, generate

logger = logging.getLogger("locbench")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


def _load(args) -> dataio.Dataset:
    return dataio.load_dataset(args.data, normalize_descriptors=True,
                               pose_convention=args.pose_convention)


def _thresholds(args) -> ThresholdTriple:
    return ThresholdTriple.parse(args.thresholds or [])


def _config(args, tasks) -> BenchmarkConfig:
    ransac = RansacParams(inlier_threshold=args.inlier_threshold, seed=args.seed)
    return BenchmarkConfig(tasks=tasks, kgrid=parse_kgrid(args.k_grid),
                           thresholds=_thresholds(args), seed=args.seed, alpha=args.alpha,
                           relevance=args.relevance, jobs=args.jobs, ransac=ransac)


def _print_json(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


# -- subcommands --------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        spec = SceneSpec(seed=args.seed, n_points=args.n_points, extent=args.extent,
                         n_db_cameras=args.n_db, n_queries=args.n_queries, pattern=args.pattern,
                         pixel_noise_sigma=args.pixel_noise, match_dropout=args.dropout,
                         outlier_rate=args.outliers)
        dmodel = DescriptorModel(mode=args.descriptor_mode, dimension=args.dimension,
                                 noise_sigma=args.descriptor_noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    scene = generate(spec, dmodel)
    dataio.save_dataset(scene.dataset, args.out)
    logger.info("wrote %d database images and %d queries to %s",
                len(scene.dataset.poses), len(scene.dataset.queries), args.out)
    return EXIT_OK


def cmd_rank(args) -> int:
    ds = _load(args)
    rankings = compute_rankings(ds)
    if args.top is not None:
        rankings = {q: Ranking(q, r.items[:args.top]) for q, r in rankings.items()}
    dataio.save_rankings(rankings.values(), args.out)
    return EXIT_OK


def cmd_pairs(args) -> int:
    ds = _load(args)
    ids = ds.database
    frusta = {i: Frustum(ds.poses[i], ds.intrinsics[i], args.near, args.far) for i in ids}
    pairs = select_overlapping_pairs(frusta, min_radius=args.min_radius,
                                     max_pairs_per_image=args.max_pairs)
    rows = [{"image_a": a, "image_b": b, "radius": r} for a, b, r in pairs]
    write_table(rows, args.out, ["image_a", "image_b", "radius"])
    logger.info("%d pairs with overlap radius >= %g m", len(rows), args.min_radius)
    return EXIT_OK


def cmd_map(args) -> int:
    ds = _load(args)
    point_map = build_global_map(ds.poses, ds.intrinsics, ds.keypoints, ds.matches,
                                 min_tri_angle=args.min_tri_angle,
                                 max_reprojection_error=args.max_reprojection)
    dataio.save_point_map(point_map, args.out)
    _print_json(vars(point_map.stats))
    return EXIT_OK


def _run_tasks(args, tasks) -> int:
    ds = _load(args)
    config = _config(args, tasks)
    point_map = dataio.load_point_map(args.map) if getattr(args, "map", None) else None
    rankings = dataio.load_rankings(args.rankings) if args.rankings else None
    if rankings is not None:
        missing = [q for q in ds.queries if q not in rankings]
        if missing:
            raise ConfigError(f"rankings file has no entry for query {missing[0]!r}")
    report = run_benchmark(ds, config, point_map=point_map, rankings=rankings)
    write_report(report, args.out, emit_plot_data=args.emit_plot_data)
    for row in report.localization:
        logger.info("%s k=%d  low %.1f%%  medium %.1f%%  high %.1f%%", row["method"], row["k"],
                    row["pct_low"], row["pct_medium"], row["pct_high"])
    return EXIT_OK


def cmd_task1(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    bad = [m for m in methods if m not in ("ewb", "bdi", "csi")]
    if bad or not methods:
        raise ConfigError(f"--methods takes a subset of ewb,bdi,csi; got {args.methods!r}")
    return _run_tasks(args, [f"task1-{m}" for m in methods])


def cmd_task2a(args) -> int:
    return _run_tasks(args, ["task2a"])


def cmd_task2b(args) -> int:
    return _run_tasks(args, ["task2b"])


def cmd_eval_retrieval(args) -> int:
    ds = _load(args)
    kgrid = parse_kgrid(args.k_grid)
    rankings = dataio.load_rankings(args.rankings) if args.rankings else compute_rankings(ds)
    oracles = relevance_oracles(ds)
    if args.relevance not in oracles:
        raise ConfigError(f"{args.relevance} relevance needs "
                          f"{'observations.txt' if args.relevance == 'iou' else 'ground_truth.txt'}")
    rows = retrieval_table(rankings, {args.relevance: oracles[args.relevance]}, kgrid)
    out = Path(args.out)
    write_table(rows, out / "retrieval.csv",
                ["relevance", "k", "precision", "recall", "n_evaluated", "n_undefined", "n_short"])
    (out / "retrieval.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n",
                                        encoding="utf-8")
    return EXIT_OK


def cmd_report(args) -> int:
    ds = _load(args)
    thresholds = _thresholds(args)
    results = []
    for path in args.results:
        results.extend(dataio.load_results(path))
    grouped = {}
    for r in results:
        grouped.setdefault((r.method, r.k), []).append(r)
    rows = []
    for (method, k) in sorted(grouped):
        pct = localized_within(grouped[(method, k)], ds.ground_truth, thresholds)
        row = {"method": method, "k": k}
        row.update({f"pct_{n}": pct[n] for n in THRESHOLD_NAMES})
        row["n_queries"] = len(grouped[(method, k)])
        rows.append(row)
    out = Path(args.out)
    write_table(rows, out / "report.csv",
                ["method", "k", "pct_low", "pct_medium", "pct_high", "n_queries"])
    (out / "report.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="locbench",
                                     description="Retrieval-based visual localization benchmark.")
    parser.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", required=True, help="dataset directory")
    data.add_argument("--pose-convention", choices=["center", "rt"], default="center",
                      help="meaning of tx,ty,tz in pose files (default: camera center)")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--k-grid", default=",".join(str(k) for k in DEFAULT_KGRID))
    common.add_argument("--thresholds", nargs="+", metavar="NAME=M,DEG",
                        help="e.g. low=5,10 medium=0.5,5 high=0.25,2")
    common.add_argument("--alpha", type=float, default=8.0, help="CSI exponent")
    common.add_argument("--relevance", choices=["iou", "pose"], default="iou")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--emit-plot-data", action="store_true")
    common.add_argument("--rankings", help="reuse a rankings CSV instead of ranking again")
    common.add_argument("--inlier-threshold", type=float, default=8.0, help="RANSAC, pixels")
    common.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--pattern", choices=PATTERNS, default="ring")
    p.add_argument("--n-points", type=int, default=200)
    p.add_argument("--extent", type=float, default=20.0)
    p.add_argument("--n-db", type=int, default=30)
    p.add_argument("--n-queries", type=int, default=10)
    p.add_argument("--pixel-noise", type=float, default=0.5)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--outliers", type=float, default=0.0)
    p.add_argument("--descriptor-mode", choices=MODES, default="pose-sensitive")
    p.add_argument("--dimension", type=int, default=2048)
    p.add_argument("--descriptor-noise", type=float, default=0.05)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("rank", parents=[data], help="rank the database for every query")
    p.add_argument("--out", required=True, help="rankings CSV")
    p.add_argument("--top", type=int, help="keep only the first N database images")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("pairs", parents=[data], help="select image pairs by frustum overlap")
    p.add_argument("--out", required=True, help="pairs CSV")
    p.add_argument("--min-radius", type=float, default=10.0)
    p.add_argument("--max-pairs", type=int, help="per-image cap")
    p.add_argument("--near", type=float, default=DEFAULT_NEAR)
    p.add_argument("--far", type=float, default=DEFAULT_FAR)
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("map", parents=[data], help="triangulate a global map")
    p.add_argument("--out", required=True, help="map directory")
    p.add_argument("--min-tri-angle", type=float, default=1.0)
    p.add_argument("--max-reprojection", type=float, default=4.0)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("task1", parents=[data, common], help="pose approximation")
    p.add_argument("--methods", default="ewb,bdi,csi")
    p.set_defaults(func=cmd_task1)

    p = sub.add_parser("task2a", parents=[data, common], help="local SFM on the retrieved images")
    p.set_defaults(func=cmd_task2a)

    p = sub.add_parser("task2b", parents=[data, common], help="registration in a global map")
    p.add_argument("--map", help="map directory from `locbench map` (default: build one)")
    p.set_defaults(func=cmd_task2b)

    p = sub.add_parser("eval-retrieval", parents=[data], help="P@k and R@k")
    p.add_argument("--out", required=True)
    p.add_argument("--rankings")
    p.add_argument("--k-grid", default=",".join(str(k) for k in DEFAULT_KGRID))
    p.add_argument("--relevance", choices=["iou", "pose"], default="iou")
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("report", parents=[data], help="threshold table from results CSVs")
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--thresholds", nargs="+", metavar="NAME=M,DEG")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"locbench: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, MissingGroundTruth) as exc:
        print(f"locbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LocbenchError as exc:
        print(f"locbench: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
