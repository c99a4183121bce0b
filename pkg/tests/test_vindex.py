"""Vector index tests against an independent brute-force oracle."""

from __future__ import annotations

import math
import random

import numpy as np
import pytest

from waferfa.vindex import DefectCase, VectorIndex, VectorIndexError, cosine_similarity


def make_case(case_id: str, embedding, defect_class="scratch") -> DefectCase:
    return DefectCase(
        case_id=case_id,
        embedding=np.asarray(embedding, dtype=np.float64),
        defect_class=defect_class,
        severity="MAJOR",
        root_cause_narrative="mechanical contact / chuck: test narrative",
        equipment_id="EQ-TEST-01",
        timestamp=0.0,
    )


def oracle_top_k(cases, query, k):
    """Pure-python reimplementation: shares nothing with the production path."""
    def cos(u, v):
        if len(u) != len(v):
            return 0.0
        dot = sum(a * b for a, b in zip(u, v))
        nu = math.sqrt(sum(a * a for a in u))
        nv = math.sqrt(sum(b * b for b in v))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return dot / (nu * nv)

    scored = [(case, cos(list(query), list(case.embedding))) for case in cases]
    scored.sort(key=lambda pair: (-pair[1], pair[0].case_id))
    return scored[:k]


def test_self_similarity():
    rng = np.random.default_rng(1)
    index = VectorIndex()
    for i in range(20):
        index.upsert(make_case(f"case-{i:03d}", rng.normal(size=56)))
    for case in index.cases():
        top, sim = index.query_top_k(case.embedding, k=1)[0]
        assert top.case_id == case.case_id
        assert abs(sim - 1.0) <= 1e-9


def test_upsert_same_id_replaces():
    index = VectorIndex()
    index.upsert(make_case("a", [1.0, 0.0]))
    index.upsert(make_case("a", [0.0, 1.0]))
    assert len(index) == 1
    assert index.get("a").embedding[1] == 1.0


def test_empty_index_returns_empty():
    assert VectorIndex().query_top_k(np.ones(4)) == []


def test_orthogonal_similarity_zero():
    index = VectorIndex()
    index.upsert(make_case("x", [1.0, 0.0, 0.0]))
    [(_, sim)] = index.query_top_k(np.array([0.0, 1.0, 0.0]), k=1)
    assert sim == 0.0


def test_zero_vector_similarity_zero():
    index = VectorIndex()
    index.upsert(make_case("z", [0.0, 0.0]))
    [(_, sim)] = index.query_top_k(np.array([1.0, 1.0]), k=1)
    assert sim == 0.0
    index.upsert(make_case("y", [1.0, 1.0]))
    results = index.query_top_k(np.zeros(2), k=2)
    assert all(sim == 0.0 for _, sim in results)


def test_cosine_properties():
    rng = np.random.default_rng(3)
    for _ in range(200):
        a = rng.normal(size=8)
        b = rng.normal(size=8)
        c = rng.uniform(0.1, 10.0)
        assert cosine_similarity(a, a) == pytest.approx(1.0, abs=1e-9)
        assert cosine_similarity(a, b) == pytest.approx(cosine_similarity(b, a), abs=1e-12)
        assert cosine_similarity(c * a, b) == pytest.approx(cosine_similarity(a, b), abs=1e-9)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(7)
    py_rng = random.Random(7)
    for trial in range(120):
        index = VectorIndex()
        cases = []
        for i in range(py_rng.randrange(1, 40)):
            case = make_case(f"case-{trial}-{i:03d}", rng.normal(size=8))
            index.upsert(case)
            cases.append(case)
        for _ in range(10):
            query = rng.normal(size=8)
            k = py_rng.randrange(1, 8)
            got = index.query_top_k(query, k)
            expected = oracle_top_k(cases, query, k)
            assert [c.case_id for c, _ in got] == [c.case_id for c, _ in expected]
            for (_, s1), (_, s2) in zip(got, expected):
                assert s1 == pytest.approx(s2, abs=1e-12)


def test_ranking_invariant_under_query_scaling():
    rng = np.random.default_rng(9)
    index = VectorIndex()
    for i in range(30):
        index.upsert(make_case(f"c{i:02d}", rng.normal(size=16)))
    query = rng.normal(size=16)
    base = [c.case_id for c, _ in index.query_top_k(query, 10)]
    for scale in (0.001, 7.0, 1e6):
        scaled = [c.case_id for c, _ in index.query_top_k(scale * query, 10)]
        assert scaled == base


def test_merge_associativity():
    rng = np.random.default_rng(11)
    left, right, merged = VectorIndex(), VectorIndex(), VectorIndex()
    for i in range(25):
        case = make_case(f"l{i:02d}", rng.normal(size=6))
        left.upsert(case)
        merged.upsert(case)
    for i in range(25):
        case = make_case(f"r{i:02d}", rng.normal(size=6))
        right.upsert(case)
        merged.upsert(case)
    query = rng.normal(size=6)
    union_top = sorted(
        left.query_top_k(query, 5) + right.query_top_k(query, 5),
        key=lambda pair: (-pair[1], pair[0].case_id),
    )[:5]
    direct = merged.query_top_k(query, 5)
    assert [c.case_id for c, _ in union_top] == [c.case_id for c, _ in direct]


def test_persistence_round_trip(tmp_path):
    path = tmp_path / "cases.idx"
    rng = np.random.default_rng(13)
    index = VectorIndex(path)
    for i in range(1000):
        index.upsert(make_case(f"case-{i:04d}", rng.normal(size=8)))
    index.upsert(make_case("case-0000", np.ones(8)))  # shadowing upsert
    query = rng.normal(size=8)
    before = index.query_top_k(query, 7)

    reopened = VectorIndex(path)
    assert len(reopened) == 1000
    after = reopened.query_top_k(query, 7)
    assert [c.case_id for c, _ in before] == [c.case_id for c, _ in after]
    for (_, s1), (_, s2) in zip(before, after):
        assert s1 == s2  # exact float round trip through JSON

    reopened.compact()
    compacted = VectorIndex(path)
    assert len(compacted) == 1000
    assert [c.case_id for c, _ in compacted.query_top_k(query, 7)] == [
        c.case_id for c, _ in after
    ]


def test_fewer_than_k_returns_all():
    index = VectorIndex()
    index.upsert(make_case("only", [1.0, 2.0]))
    results = index.query_top_k(np.array([1.0, 2.0]), k=5)
    assert len(results) == 1


def test_mismatched_dimension_scores_zero():
    index = VectorIndex()
    index.upsert(make_case("short", [1.0, 2.0]))
    [(_, sim)] = index.query_top_k(np.ones(5), k=1)
    assert sim == 0.0


def test_invalid_k():
    with pytest.raises(VectorIndexError):
        VectorIndex().query_top_k(np.ones(3), k=0)


def test_non_finite_embedding_rejected():
    with pytest.raises(VectorIndexError):
        make_case("bad", [1.0, float("nan")])
