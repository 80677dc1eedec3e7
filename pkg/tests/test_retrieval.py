import numpy as np
import pytest

from seqplace.core import Traversal
from seqplace.composers import make_pipeline
from seqplace.retrieval import (
    EmptyIndexError,
    PlaceIndex,
    bench_csv,
    bench_search,
    build_index,
    load_index,
    query_nn,
    save_index,
)


def brute_force_nn(descriptors, q):
    """Independent oracle: per-entry python loop, first minimum wins."""
    best_i, best_d = -1, float("inf")
    for i, row in enumerate(descriptors):
        d = 0.0
        for a, b in zip(row, q):
            diff = float(a) - float(b)
            d += diff * diff
        if d < best_d:
            best_i, best_d = i, d
    return best_i, best_d


def random_index(rng, n=20, k=4):
    descs = rng.standard_normal((n, k))
    return PlaceIndex(descs, np.arange(n), np.arange(n)[:, None])


class TestBuildIndex:
    def test_window_count(self):
        trav = Traversal(0, np.zeros((10, 2), dtype=np.float32))
        pipe = make_pipeline("grouping", 3, 2)
        assert len(build_index(trav, pipe)) == 8

    def test_stride(self):
        trav = Traversal(0, np.zeros((10, 2), dtype=np.float32))
        pipe = make_pipeline("grouping", 3, 2)
        idx = build_index(trav, pipe, stride=3)
        assert list(idx.start_frame_ids) == [0, 3, 6]

    def test_grouping_dimension(self):
        trav = Traversal(0, np.zeros((10, 2), dtype=np.float32))
        idx = build_index(trav, make_pipeline("grouping", 3, 2))
        assert idx.dim == 6

    def test_too_short(self):
        trav = Traversal(0, np.zeros((2, 2), dtype=np.float32))
        with pytest.raises(ValueError):
            build_index(trav, make_pipeline("grouping", 3, 2))

    def test_place_ids_follow_traversal(self):
        trav = Traversal(0, np.zeros((5, 2), dtype=np.float32),
                         place_ids=np.array([9, 7, 5, 3, 1]))
        idx = build_index(trav, make_pipeline("grouping", 2, 2))
        assert idx.entry(0).place_ids == (9, 7)
        assert idx.entry(3).place_ids == (3, 1)


class TestQueryNN:
    def test_exact_match_distance_zero(self):
        rng = np.random.default_rng(0)
        idx = random_index(rng)
        entry, d2 = query_nn(idx, idx.descriptors[7])
        assert d2 == 0.0
        assert entry.start_frame_id == 7

    def test_hand_computed_two_entry_case(self):
        idx = PlaceIndex(np.array([[0.0, 0.0], [3.0, 4.0]]),
                         np.array([0, 1]), np.array([[0], [1]]))
        entry, d2 = query_nn(idx, np.array([1.0, 0.0]))
        # distances are 1 and 20
        assert entry.start_frame_id == 0
        assert d2 == 1.0

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            idx = random_index(rng, n=int(rng.integers(1, 120)), k=int(rng.integers(1, 10)))
            q = rng.standard_normal(idx.dim)
            entry, d2 = query_nn(idx, q)
            oi, od = brute_force_nn(idx.descriptors, q)
            assert entry.start_frame_id == oi
            assert abs(d2 - od) <= 1e-9 * max(1.0, od)

    def test_tie_breaks_to_lowest_start(self):
        row = np.array([1.0, 2.0, 3.0])
        descs = np.stack([row + 10, row, row + 5, row, row])  # exact ties at 1, 3, 4
        idx = PlaceIndex(descs, np.arange(5), np.arange(5)[:, None])
        entry, d2 = query_nn(idx, row)
        assert entry.start_frame_id == 1
        assert d2 == 0.0

    def test_empty_index(self):
        idx = PlaceIndex(np.zeros((0, 3)), np.zeros(0), np.zeros((0, 1)))
        with pytest.raises(EmptyIndexError):
            query_nn(idx, np.zeros(3))

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(2)
        idx = random_index(rng)
        with pytest.raises(ValueError):
            query_nn(idx, np.zeros(idx.dim + 1))

    def test_chunked_scan_agrees_with_oracle(self):
        # database larger than one scan chunk
        rng = np.random.default_rng(3)
        descs = rng.standard_normal((9000, 3)).astype(np.float32)
        idx = PlaceIndex(descs, np.arange(9000), np.arange(9000)[:, None])
        for _ in range(5):
            q = rng.standard_normal(3).astype(np.float32)
            entry, d2 = query_nn(idx, q)
            oi, od = brute_force_nn(descs, q)
            assert entry.start_frame_id == oi


class TestPersistence:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        descs = rng.standard_normal((6, 3)).astype(np.float32).astype(np.float64)
        idx = PlaceIndex(descs, np.arange(6), rng.integers(0, 50, size=(6, 3)),
                         condition_id=2)
        path = str(tmp_path / "i.spi")
        save_index(path, idx)
        back = load_index(path)
        assert back.condition_id == 2
        assert np.array_equal(back.descriptors, idx.descriptors)
        assert np.array_equal(back.place_ids, idx.place_ids)
        assert np.array_equal(back.start_frame_ids, idx.start_frame_ids)

    def test_rejects_garbage(self, tmp_path):
        p = tmp_path / "x.spi"
        p.write_bytes(b"not an index at all")
        with pytest.raises(ValueError):
            load_index(str(p))


class TestBench:
    def test_result_fields_and_csv(self):
        r = bench_search(8, 500, trials=3, seed=0)
        assert r.k == 8 and r.N == 500 and r.trials == 3
        assert r.mean_ms > 0.0
        csv = bench_csv([r])
        lines = csv.strip().split("\n")
        assert lines[0] == "k,N,trials,mean_ms,stddev_ms"
        assert lines[1].startswith("8,500,3,")

    def test_rejects_degenerate(self):
        with pytest.raises(ValueError):
            bench_search(0, 10)

    def test_monotone_in_n_smoke(self):
        # fixed k: time should not shrink when the database grows 8x
        slow = bench_search(64, 160_000, trials=5, seed=1)
        fast = bench_search(64, 20_000, trials=5, seed=1)
        assert slow.mean_ms > fast.mean_ms
