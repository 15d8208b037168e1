import hashlib
import struct

import numpy as np
import pytest

from xlingqa import index_kernels
from xlingqa.dense_index import (
    BadMagicError,
    ChecksumMismatchError,
    DenseIndex,
    TruncatedIndexError,
    build,
    load,
    save,
    search,
    search_batch,
)


def oracle_search(index: DenseIndex, query, k):
    """Naive full sort over the normative row scores; selection logic is
    fully independent of the index's partition-based top-k."""
    score_vec = index_kernels.scores(index.matrix, np.asarray(query, dtype=np.float64))
    order = sorted(range(len(index)), key=lambda i: (-score_vec[i], index.ids[i]))
    return [(index.ids[i], float(score_vec[i])) for i in order[:min(k, len(index))]]


@pytest.fixture(params=["numba", "numpy"])
def backend(request, monkeypatch):
    monkeypatch.setenv("XLINGQA_NUMBA", "1" if request.param == "numba" else "0")
    return request.param


def _random_index(n, dim, seed):
    rng = np.random.default_rng(seed)
    matrix = rng.standard_normal((n, dim)).astype(np.float32)
    ids = [f"p{i:06d}" for i in rng.permutation(n)]
    return build(zip(ids, matrix), dim=dim)


class TestBuild:
    def test_three_pairs(self):
        index = build([("a", [1.0, 0.0]), ("b", [0.0, 1.0]), ("c", [0.5, 0.5])], dim=2)
        assert len(index) == 3

    def test_duplicate_id(self):
        with pytest.raises(ValueError, match="dup"):
            build([("a", [1.0, 0.0]), ("a", [0.0, 1.0])], dim=2)

    def test_dim_mismatch(self):
        with pytest.raises(ValueError, match="dim"):
            build([("a", [1.0, 0.0, 0.0])], dim=2)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            build([("a", [np.nan, 0.0])], dim=2)

    def test_empty_index_search(self):
        index = build([], dim=4)
        assert search(index, np.zeros(4), k=3) == []


class TestSearch:
    def test_worked_example(self, backend):
        index = build([("a", [1.0, 0.0]), ("b", [0.0, 1.0]), ("c", [0.5, 0.5])], dim=2)
        results = search(index, [1.0, 0.0], k=2)
        assert [(r.passage_id, r.score, r.rank) for r in results] == [
            ("a", 1.0, 0), ("c", 0.5, 1)]

    def test_k_larger_than_index(self, backend):
        index = _random_index(17, 8, seed=0)
        results = search(index, np.ones(8), k=100)
        assert len(results) == 17
        scores = [r.score for r in results]
        assert scores == sorted(scores, reverse=True)

    def test_identical_vectors_tie_by_id(self, backend):
        index = build([("zz", [1.0, 1.0]), ("aa", [1.0, 1.0]), ("mm", [0.0, 0.0])], dim=2)
        results = search(index, [1.0, 0.5], k=3)
        assert [r.passage_id for r in results] == ["aa", "zz", "mm"]

    def test_query_dim_mismatch(self):
        index = _random_index(5, 4, seed=1)
        with pytest.raises(ValueError, match="dim"):
            search(index, np.ones(5), k=1)

    def test_matches_oracle_small(self, backend):
        for seed in range(5):
            index = _random_index(200, 16, seed=seed)
            rng = np.random.default_rng(seed + 100)
            for _ in range(10):
                query = rng.standard_normal(16)
                for k in (1, 10, 200):
                    got = search(index, query, k)
                    expected = oracle_search(index, query, k)
                    assert [(r.passage_id, r.score) for r in got] == expected
                    assert [r.rank for r in got] == list(range(len(got)))

    def test_monotone_prefix(self, backend):
        index = _random_index(300, 12, seed=3)
        query = np.random.default_rng(0).standard_normal(12)
        prev = [r.passage_id for r in search(index, query, k=5)]
        for k in range(6, 20):
            cur = [r.passage_id for r in search(index, query, k=k)]
            assert cur[:len(prev)] == prev
            prev = cur

    def test_scale_covariance(self, backend):
        index = _random_index(100, 8, seed=4)
        query = np.random.default_rng(1).standard_normal(8)
        base = [r.passage_id for r in search(index, query, k=10)]
        for scale in (0.25, 3.0, 1000.0):
            scaled = [r.passage_id for r in search(index, query * scale, k=10)]
            assert scaled == base


class TestSearchBatch:
    def test_batch_of_one(self, backend):
        index = _random_index(50, 8, seed=5)
        query = np.random.default_rng(2).standard_normal(8)
        assert search_batch(index, [query], k=5) == [search(index, query, k=5)]

    def test_batch_matches_per_query(self, backend):
        index = _random_index(400, 16, seed=6)
        rng = np.random.default_rng(7)
        queries = [rng.standard_normal(16) for _ in range(20)]
        batched = search_batch(index, queries, k=7)
        singles = [search(index, q, k=7) for q in queries]
        assert [[r.passage_id for r in row] for row in batched] == \
            [[r.passage_id for r in row] for row in singles]

    def test_partition_independence(self, backend):
        index = _random_index(100, 8, seed=8)
        rng = np.random.default_rng(9)
        queries = [rng.standard_normal(8) for _ in range(6)]
        full = search_batch(index, queries, k=4)
        split = search_batch(index, queries[:2], k=4) + search_batch(index, queries[2:], k=4)
        assert full == split


def test_backends_agree_on_order():
    index = _random_index(2000, 32, seed=11)
    rng = np.random.default_rng(12)
    queries = [rng.standard_normal(32) for _ in range(20)]
    orders = {}
    for flag in ("1", "0"):
        import os

        os.environ["XLINGQA_NUMBA"] = flag
        try:
            orders[flag] = [[r.passage_id for r in row]
                            for row in search_batch(index, queries, k=10)]
        finally:
            os.environ.pop("XLINGQA_NUMBA", None)
    assert orders["1"] == orders["0"]


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        index = _random_index(5, 6, seed=20)
        path = tmp_path / "toy.xlidx"
        save(index, path)
        loaded = load(path)
        assert loaded.ids == index.ids
        assert loaded.dim == index.dim
        assert np.array_equal(loaded.matrix, index.matrix)

    def test_roundtrip_bit_exact_by_checksum(self, tmp_path):
        index = _random_index(64, 24, seed=21)
        path_a, path_b = tmp_path / "a.xlidx", tmp_path / "b.xlidx"
        save(index, path_a)
        save(load(path_a), path_b)
        digest_a = hashlib.sha256(path_a.read_bytes()).hexdigest()
        digest_b = hashlib.sha256(path_b.read_bytes()).hexdigest()
        assert digest_a == digest_b

    def test_empty_roundtrip(self, tmp_path):
        index = build([], dim=3)
        path = tmp_path / "empty.xlidx"
        save(index, path)
        loaded = load(path)
        assert len(loaded) == 0
        assert search(loaded, np.zeros(3), k=1) == []

    def test_unicode_ids(self, tmp_path):
        index = build([("記事-0", [0.5, 1.0]), ("статья-1", [1.0, 0.0])], dim=2)
        path = tmp_path / "uni.xlidx"
        save(index, path)
        assert load(path).ids == index.ids

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.xlidx"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(BadMagicError):
            load(path)

    def test_truncated(self, tmp_path):
        index = _random_index(10, 4, seed=22)
        path = tmp_path / "t.xlidx"
        save(index, path)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(TruncatedIndexError):
            load(path)

    def test_checksum_mismatch(self, tmp_path):
        index = _random_index(10, 4, seed=23)
        path = tmp_path / "c.xlidx"
        save(index, path)
        blob = bytearray(path.read_bytes())
        blob[20] ^= 0xFF  # flip a bit inside the vector block
        path.write_bytes(bytes(blob))
        with pytest.raises(ChecksumMismatchError):
            load(path)

    def test_file_layout_header(self, tmp_path):
        index = build([("x", [1.0, 2.0, 3.0])], dim=3)
        path = tmp_path / "h.xlidx"
        save(index, path)
        blob = path.read_bytes()
        assert blob[:8] == b"XLIDX001"
        assert struct.unpack_from("<I", blob, 8)[0] == 3
        assert struct.unpack_from("<Q", blob, 12)[0] == 1
