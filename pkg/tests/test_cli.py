import filecmp
import json
import subprocess
import sys

import pytest

from locbench.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(root), "--n-queries", "6"]) == 0
    return root


def _tree(path):
    return sorted(p.relative_to(path) for p in path.rglob("*") if p.is_file())


def test_synth_files(data_dir):
    names = {str(p) for p in _tree(data_dir)}
    for required in ("sensors.txt", "trajectories.txt", "ground_truth.txt", "queries.txt",
                     "global_descriptors.bin", "global_descriptors.idx", "matches.txt",
                     "observations.txt", "points3d.txt"):
        assert required in names
    assert any(n.startswith("keypoints/") for n in names)


def test_task_runs_byte_identical_across_jobs(data_dir, tmp_path):
    for jobs in (1, 8):
        out = tmp_path / f"j{jobs}"
        argv = ["task2b", "--data", str(data_dir), "--out", str(out), "--jobs", str(jobs),
                "--k-grid", "1,2,5", "--seed", "7", "--emit-plot-data"]
        assert main(argv) == 0
        argv = ["task2a", "--data", str(data_dir), "--out", str(out / "2a"), "--jobs", str(jobs),
                "--k-grid", "2,5", "--seed", "7"]
        assert main(argv) == 0
    a, b = tmp_path / "j1", tmp_path / "j8"
    assert _tree(a) == _tree(b)
    for rel in _tree(a):
        assert filecmp.cmp(a / rel, b / rel, shallow=False), rel


def test_rank_eval_and_report(data_dir, tmp_path):
    rankings = tmp_path / "rankings.csv"
    assert main(["rank", "--data", str(data_dir), "--out", str(rankings), "--top", "5"]) == 0
    lines = rankings.read_text().splitlines()
    assert lines[0] == "query,rank,db_image,score" and len(lines) == 1 + 6 * 5
    assert main(["eval-retrieval", "--data", str(data_dir), "--out", str(tmp_path / "ev"),
                 "--k-grid", "1,5", "--relevance", "pose"]) == 0
    rows = json.loads((tmp_path / "ev" / "retrieval.json").read_text())
    assert [r["k"] for r in rows] == [1, 5]
    assert main(["task1", "--data", str(data_dir), "--out", str(tmp_path / "t1"),
                 "--methods", "ewb,csi", "--k-grid", "1,2", "--rankings", str(rankings)]) == 0
    assert main(["report", "--data", str(data_dir), "--results", str(tmp_path / "t1" / "results.csv"),
                 "--out", str(tmp_path / "rep"), "--thresholds", "low=5,10"]) == 0
    rep = json.loads((tmp_path / "rep" / "report.json").read_text())
    assert {(r["method"], r["k"]) for r in rep} == {("task1-ewb", 1), ("task1-ewb", 2),
                                                    ("task1-csi", 1), ("task1-csi", 2)}


def test_pairs_and_map(data_dir, tmp_path, capsys):
    out = tmp_path / "pairs.csv"
    assert main(["pairs", "--data", str(data_dir), "--out", str(out), "--min-radius", "2",
                 "--max-pairs", "3"]) == 0
    assert out.read_text().startswith("image_a,image_b,radius\n")
    assert main(["map", "--data", str(data_dir), "--out", str(tmp_path / "map")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["triangulated"] > 0
    assert main(["task2b", "--data", str(data_dir), "--out", str(tmp_path / "t2b"),
                 "--k-grid", "1", "--map", str(tmp_path / "map")]) == 0


@pytest.mark.parametrize("argv", [
    ["task1", "--k-grid", "5,2"],
    ["task1", "--thresholds", "medium=0.5,20"],
    ["task1", "--methods", "median"],
    ["task2b", "--jobs", "0"],
])
def test_config_errors_exit_2(data_dir, tmp_path, argv):
    full = argv[:1] + ["--data", str(data_dir), "--out", str(tmp_path / "o")] + argv[1:]
    assert main(full) == 2


def test_synth_bad_spec_exit_2(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "s"), "--outliers", "1.5"]) == 2


def test_data_errors_exit_3(data_dir, tmp_path):
    assert main(["rank", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "r.csv")]) == 3
    broken = tmp_path / "broken"
    broken.mkdir()
    for p in data_dir.iterdir():
        if p.is_file():
            (broken / p.name).write_bytes(p.read_bytes())
    (broken / "queries.txt").write_text("# locbench queries 9\nq\n")
    assert main(["rank", "--data", str(broken), "--out", str(tmp_path / "r.csv")]) == 3


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "locbench.cli", "synth", "--out",
                           str(tmp_path / "d"), "--n-queries", "2", "--n-db", "8",
                           "--dimension", "64"], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "locbench.cli", "task1", "--data",
                           str(tmp_path / "d"), "--out", str(tmp_path / "o"),
                           "--k-grid", "3,1"], capture_output=True, text=True)
    assert proc.returncode == 2 and "k grid" in proc.stderr
