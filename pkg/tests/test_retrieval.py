import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from locbench.errors import DimensionMismatch, EmptyDatabase, ZeroDescriptor
from locbench.geometry import Pose, axis_angle_quaternion
from locbench.retrieval import (
    DescriptorSet,
    Ranking,
    RelevanceOracle,
    iou_relevance,
    normalize_all,
    pose_relevance,
    precision_at_k,
    rank_database,
    recall_at_k,
    retrieval_metrics,
)
from oracles import brute_iou, brute_precision, brute_rank, brute_recall

id_sets = st.sets(st.integers(0, 30), max_size=12)


@given(id_sets, id_sets)
def test_iou_matches_brute_force(a, b):
    assert iou_relevance(a, b) == brute_iou(a, b)


def test_iou_examples():
    assert iou_relevance({1, 2, 3}, {2, 3, 4}) == 0.5
    assert iou_relevance(set(), set()) == 0.0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40), st.integers(1, 50))
def test_rank_matches_brute_force(seed, n, k):
    rng = np.random.default_rng(seed)
    # small integer vectors produce many exact ties
    vecs = rng.integers(-2, 3, size=(n, 3)).astype(float)
    vecs[np.all(vecs == 0, axis=1)] = [1, 0, 0]
    ids = [f"img{i:02d}" for i in rng.permutation(n)]
    db = DescriptorSet(dict(zip(ids, vecs)))
    q = rng.integers(-2, 3, 3).astype(float)
    if not q.any():
        q[0] = 1
    ranking = rank_database(q, db, k)
    exp_ids, exp_scores = brute_rank(list(q), ids, [list(v) for v in vecs], k)
    assert ranking.ids == exp_ids
    assert np.allclose([s for _, s in ranking.items], exp_scores, rtol=0, atol=1e-12)
    scores = [s for _, s in ranking.items]
    assert scores == sorted(scores, reverse=True)


def test_rank_tie_break_by_id():
    db = DescriptorSet({"b": [1.0, 0.0], "a": [2.0, 0.0], "c": [0.0, 1.0]})
    assert rank_database([1.0, 0.0], db, 3).ids == ["a", "b", "c"]
    # scaled copies differ only by rounding after normalization
    db = DescriptorSet({"z": [1.0, 2.0, 2.0], "y": [3.0, 6.0, 6.0], "x": [7.0, 14.0, 14.0]})
    assert rank_database([0.3, 0.1, 0.7], db, 3).ids == ["x", "y", "z"]


def test_rank_examples():
    db = DescriptorSet({"a": [1.0, 0.0], "b": [0.0, 1.0]})
    r = rank_database([0.8, 0.6], db, 5)
    assert r.ids == ["a", "b"]
    assert np.allclose([s for _, s in r.items], [0.8, 0.6])
    assert rank_database([0.0, 3.0], db, 1).items == (("b", 1.0),)


def test_rank_errors():
    db = DescriptorSet({"a": [1.0, 0.0]})
    with pytest.raises(DimensionMismatch):
        rank_database([1.0, 0.0, 0.0], db, 1)
    with pytest.raises(ZeroDescriptor):
        rank_database([0.0, 0.0], db, 1)
    with pytest.raises(EmptyDatabase):
        rank_database([1.0, 0.0], DescriptorSet({}, dimension=2), 1)
    with pytest.raises(ZeroDescriptor):
        normalize_all(DescriptorSet({"z": [0.0, 0.0]}))


def _oracle(rel):
    obs = {"q": {0}}
    for image_id, relevant in rel.items():
        obs[image_id] = {0} if relevant else {1}
    return RelevanceOracle.iou(obs)


def test_precision_recall_examples():
    ranking = Ranking("q", (("a", 0.9), ("b", 0.8), ("c", 0.7), ("d", 0.6)))
    oracle = _oracle({"a": False, "b": True, "c": False, "d": True})
    assert precision_at_k(ranking, oracle, 1) == 0.0
    assert recall_at_k(ranking, oracle, 1) == 0
    assert precision_at_k(ranking, oracle, 2) == 0.5
    assert recall_at_k(ranking, oracle, 2) == 1
    assert precision_at_k(ranking, oracle, 4) == 0.5
    # fewer than k available: averaged over what is there
    assert precision_at_k(ranking, oracle, 10) == 0.5


@settings(max_examples=80)
@given(st.lists(st.booleans(), min_size=1, max_size=30), st.integers(1, 40))
def test_metrics_match_brute_force(flags, k):
    ids = [f"d{i:02d}" for i in range(len(flags))]
    ranking = Ranking("q", tuple((i, 1.0 - j / 100) for j, i in enumerate(ids)))
    oracle = _oracle(dict(zip(ids, flags)))
    assert precision_at_k(ranking, oracle, k) == brute_precision(flags, k)
    assert recall_at_k(ranking, oracle, k) == brute_recall(flags, k)


def test_recall_monotone_in_k():
    rng = np.random.default_rng(2)
    flags = list(rng.random(20) < 0.2)
    ids = [f"d{i:02d}" for i in range(20)]
    ranking = Ranking("q", tuple((i, 0.0) for i in ids))
    oracle = _oracle(dict(zip(ids, flags)))
    r = [recall_at_k(ranking, oracle, k) for k in range(1, 21)]
    assert r == sorted(r)


def test_pose_relevance_thresholds():
    a = Pose(np.zeros(3), [1, 0, 0, 0])
    assert pose_relevance(a, Pose(np.array([25.0, 0, 0]), [1, 0, 0, 0]))
    assert not pose_relevance(a, Pose(np.array([25.01, 0, 0]), [1, 0, 0, 0]))
    assert pose_relevance(a, Pose(np.zeros(3), axis_angle_quaternion([0, 0, 1], np.radians(44.9))))
    assert not pose_relevance(a, Pose(np.zeros(3), axis_angle_quaternion([0, 0, 1], np.radians(45.1))))


def test_undefined_queries_excluded():
    obs = {"q1": {0}, "q2": {5}, "a": {0}, "b": {1}}
    oracle = RelevanceOracle.iou(obs, database=["a", "b"])
    rankings = [Ranking("q1", (("a", 1.0), ("b", 0.5))), Ranking("q2", (("a", 1.0), ("b", 0.5))),
                Ranking("q3", (("b", 1.0),))]
    s = retrieval_metrics(rankings, oracle, 2)
    assert s.n_evaluated == 1
    assert s.n_undefined == 2
    assert s.undefined_queries == ["q2", "q3"]
    assert s.precision == 0.5 and s.recall == 1.0


def test_short_rankings_counted():
    oracle = RelevanceOracle.iou({"q": {0}, "a": {0}})
    s = retrieval_metrics([Ranking("q", (("a", 1.0),))], oracle, 5)
    assert s.n_short == 1 and s.precision == 1.0


def test_descriptor_set_dimension_check():
    with pytest.raises(DimensionMismatch):
        DescriptorSet({"a": [1.0, 2.0], "b": [1.0]})
