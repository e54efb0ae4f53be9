"""Exact-search oracle checks.

The reference here is a deliberately naive double loop in plain Python:
explicit per-dimension multiply-accumulate, explicit max tracking, explicit
sorting for top-k. The vectorized implementations must agree exactly.
"""

import numpy as np
import pytest

from amips.errors import DataError, FormatError
from amips.exact import (TargetSet, build_targets, flops_exact_search, load_targets,
                         save_targets, support_and_argmax, top_k)
from amips.cluster import Partition
from amips.store import EmbeddingStore, normalize_rows


def naive_support(keys, x):
    """Double loop, tracks the running max, first index wins ties."""
    best_val, best_idx = None, None
    for i in range(keys.rows):
        acc = 0.0
        for j in range(keys.dim):
            acc += float(keys.data[i, j]) * float(x[j])
        if best_val is None or acc > best_val:
            best_val, best_idx = acc, i
    return best_val, best_idx


def naive_top_k(keys, x, k):
    scored = []
    for i in range(keys.rows):
        acc = 0.0
        for j in range(keys.dim):
            acc += float(keys.data[i, j]) * float(x[j])
        scored.append((acc, i))
    scored.sort(key=lambda t: (-t[0], t[1]))
    return scored[:k]


def rand_keys(n, d, seed):
    data = np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)
    return EmbeddingStore(data=data, kind="key")


def test_matches_naive_double_loop():
    rng = np.random.default_rng(0)
    for trial in range(25):
        n, d = int(rng.integers(5, 120)), int(rng.integers(2, 16))
        keys = rand_keys(n, d, seed=trial)
        x = rng.standard_normal(d)
        want_val, want_idx = naive_support(keys, x)
        got_val, got_idx = support_and_argmax(keys, x)
        assert got_idx == want_idx
        assert abs(got_val - want_val) < 1e-9 * max(1.0, abs(want_val))
        k = int(rng.integers(1, n + 1))
        want = naive_top_k(keys, x, k)
        vals, idxs = top_k(keys, x, k)
        assert list(idxs) == [i for _, i in want]


def test_tie_breaks_to_lowest_index():
    row = np.array([[1.0, 0.0]], dtype=np.float32)
    keys = EmbeddingStore(data=np.vstack([row, [[0.0, 1.0]], row, row]))
    val, idx = support_and_argmax(keys, np.array([1.0, 0.0]))
    assert idx == 0 and val == 1.0
    _, idxs = top_k(keys, np.array([1.0, 0.0]), 4)
    assert list(idxs) == [0, 2, 3, 1]


def test_member_subset_and_errors():
    keys = rand_keys(30, 6, seed=3)
    x = np.random.default_rng(4).standard_normal(6)
    members = np.array([17, 3, 25, 3])
    val, idx = support_and_argmax(keys, x, members=members)
    want = max(((float(keys.f64()[m] @ x), m) for m in sorted(set(members.tolist()))),
               key=lambda t: (t[0], -t[1]))
    assert (pytest.approx(val), idx) == (want[0], want[1])
    with pytest.raises(DataError):
        support_and_argmax(keys, x, members=np.array([], dtype=int))
    with pytest.raises(DataError):
        support_and_argmax(keys, np.zeros(5))
    with pytest.raises(DataError):
        top_k(keys, x, 0)


def test_positive_homogeneity_of_argmax():
    keys = rand_keys(40, 5, seed=5)
    x = np.random.default_rng(6).standard_normal(5)
    v1, i1 = support_and_argmax(keys, x)
    v2, i2 = support_and_argmax(keys, 3.5 * x)
    assert i1 == i2
    assert abs(v2 - 3.5 * v1) < 1e-9


def test_flops_exact_search_instrumented():
    # count multiply-adds in the reference loop directly
    keys = rand_keys(13, 7, seed=7)
    x = np.random.default_rng(8).standard_normal(7)
    macs = 0
    for i in range(keys.rows):
        for _ in range(keys.dim):
            macs += 1
    assert flops_exact_search(keys.rows, keys.dim) == 2 * macs == 182


def test_build_targets_global_and_partitioned():
    keys = normalize_rows(rand_keys(50, 8, seed=9))
    qdata = np.random.default_rng(10).standard_normal((12, 8)).astype(np.float32)
    queries = normalize_rows(EmbeddingStore(data=qdata, kind="query"))
    ts = build_targets(queries, keys)
    assert (ts.count, ts.clusters) == (12, 1)
    for i in range(queries.rows):
        val, idx = support_and_argmax(keys, queries.f64()[i])
        assert ts.key_index[i, 0] == idx
        assert abs(ts.support_value[i, 0] - val) < 1e-12

    ids = np.random.default_rng(11).integers(0, 4, size=50).astype(np.int32)
    cents = np.zeros((4, 8))
    part = Partition(cluster_of=ids, centroids=cents)
    ts4 = build_targets(queries, keys, part)
    assert ts4.clusters == 4
    members = part.member_lists()
    for i in range(queries.rows):
        for j in range(4):
            val, idx = support_and_argmax(keys, queries.f64()[i], members=members[j])
            assert ts4.key_index[i, j] == idx
            assert abs(ts4.support_value[i, j] - val) < 1e-12
    # global optimum equals the best per-cluster optimum
    np.testing.assert_allclose(ts4.support_value.max(axis=1), ts.support_value[:, 0],
                               atol=1e-12)


def test_targets_values_invariant_to_member_order():
    keys = normalize_rows(rand_keys(20, 5, seed=12))
    queries = normalize_rows(EmbeddingStore(
        data=np.random.default_rng(13).standard_normal((6, 5)).astype(np.float32),
        kind="query"))
    ids = np.array([i % 2 for i in range(20)], dtype=np.int32)
    part = Partition(cluster_of=ids, centroids=np.zeros((2, 5)))
    ts = build_targets(queries, keys, part)
    # relabel: reverse key order, remap partition and compare support values
    rev = np.arange(19, -1, -1)
    keys_rev = EmbeddingStore(data=keys.data[rev], kind="key")
    part_rev = Partition(cluster_of=ids[rev], centroids=np.zeros((2, 5)))
    ts_rev = build_targets(queries, keys_rev, part_rev)
    np.testing.assert_array_equal(np.sort(ts.support_value, axis=1),
                                  np.sort(ts_rev.support_value, axis=1))


def test_targets_file_round_trip(tmp_path):
    keys = normalize_rows(rand_keys(25, 6, seed=14))
    queries = normalize_rows(EmbeddingStore(
        data=np.random.default_rng(15).standard_normal((9, 6)).astype(np.float32),
        kind="query"))
    ts = build_targets(queries, keys)
    path = str(tmp_path / "t.amtg")
    save_targets(ts, path)
    back = load_targets(path, queries, keys)
    np.testing.assert_array_equal(back.key_index, ts.key_index)
    np.testing.assert_allclose(back.support_value, ts.support_value, atol=0)

    blob = bytearray(open(path, "rb").read())
    blob[:4] = b"GARB"
    (tmp_path / "bad.amtg").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_targets(str(tmp_path / "bad.amtg"), queries, keys)
    (tmp_path / "cut.amtg").write_bytes(bytes(open(path, "rb").read()[:-3]))
    with pytest.raises(FormatError):
        load_targets(str(tmp_path / "cut.amtg"), queries, keys)


def test_targets_dim_and_count_checks(tmp_path):
    keys = rand_keys(10, 4, seed=16)
    queries = EmbeddingStore(data=np.ones((3, 5), dtype=np.float32), kind="query")
    with pytest.raises(DataError):
        build_targets(queries, keys)
    q4 = EmbeddingStore(data=np.ones((3, 4), dtype=np.float32), kind="query")
    ts = build_targets(q4, keys)
    path = str(tmp_path / "t.amtg")
    save_targets(ts, path)
    q_wrong = EmbeddingStore(data=np.ones((5, 4), dtype=np.float32), kind="query")
    with pytest.raises(DataError):
        load_targets(path, q_wrong, keys)
