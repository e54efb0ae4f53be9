"""k-means behavior: determinism, SSE descent, repair, balance selection."""

import numpy as np
import pytest

from amips.cluster import (Partition, balance_score, kmeans_fit, load_partition,
                           save_partition, select_balanced)
from amips.errors import DataError, FormatError
from amips.store import EmbeddingStore


def blobs(n_per=50, c=3, d=4, seed=0, spread=0.15):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((c, d)) * 3
    pts = np.concatenate([centers[i] + spread * rng.standard_normal((n_per, d))
                          for i in range(c)])
    return EmbeddingStore(data=pts.astype(np.float32), kind="key")


def sse(store, part):
    data = store.f64()
    resid = data - part.centroids[part.cluster_of]
    return float(np.sum(resid * resid))


def test_deterministic_and_recovers_blobs():
    keys = blobs(seed=1)
    a = kmeans_fit(keys, c=3, seed=7)
    b = kmeans_fit(keys, c=3, seed=7)
    np.testing.assert_array_equal(a.cluster_of, b.cluster_of)
    np.testing.assert_array_equal(a.centroids, b.centroids)
    # well-separated blobs: each true blob lands in exactly one cluster
    ids = a.cluster_of.reshape(3, 50)
    assert all(len(set(row.tolist())) == 1 for row in ids)
    assert len({row[0] for row in ids}) == 3


def test_centroids_are_member_means_and_assignment_nearest():
    keys = blobs(seed=2)
    part = kmeans_fit(keys, c=3, seed=3)
    data = keys.f64()
    for j, members in enumerate(part.member_lists()):
        np.testing.assert_allclose(part.centroids[j], data[members].mean(axis=0),
                                   atol=1e-6)
    d2 = ((data[:, None, :] - part.centroids[None]) ** 2).sum(axis=2)
    np.testing.assert_array_equal(part.cluster_of, np.argmin(d2, axis=1))


def test_sse_non_increasing_over_iterations():
    keys = blobs(n_per=40, c=4, d=5, seed=4, spread=1.2)  # messy overlap
    values = [sse(keys, kmeans_fit(keys, c=4, seed=5, max_iters=t))
              for t in range(1, 12)]
    for prev, cur in zip(values, values[1:]):
        assert cur <= prev + 1e-9


def test_no_empty_clusters_even_when_forced():
    # more clusters than natural groups still yields all-nonempty clusters
    rng = np.random.default_rng(6)
    tight = rng.standard_normal((1, 3)) + 0.01 * rng.standard_normal((30, 3))
    keys = EmbeddingStore(data=tight.astype(np.float32), kind="key")
    part = kmeans_fit(keys, c=8, seed=0)
    assert part.sizes().min() >= 1
    assert part.sizes().sum() == 30


def test_duplicate_points_exceeding_clusters():
    data = np.zeros((10, 2), dtype=np.float32)
    data[5:] = 1.0
    keys = EmbeddingStore(data=data, kind="key")
    part = kmeans_fit(keys, c=4, seed=1)
    assert part.sizes().min() >= 1


def test_balance_score_worked_example():
    part = Partition(cluster_of=np.array([0, 0, 1, 1, 1, 1, 1, 1], dtype=np.int32),
                     centroids=np.zeros((2, 3)))
    assert balance_score(part) == pytest.approx(0.5)  # sizes 2,6: std 2, mean 4


def test_select_balanced_minimizes_cv():
    keys = blobs(n_per=30, c=3, d=4, seed=7, spread=1.0)
    best = select_balanced(keys, c=3, seed=100, restarts=6)
    best_cv = balance_score(best)
    for r in range(6):
        assert best_cv <= balance_score(kmeans_fit(keys, c=3, seed=100 + r)) + 1e-12
    # restarts=1 is exactly kmeans_fit
    one = select_balanced(keys, c=3, seed=42, restarts=1)
    ref = kmeans_fit(keys, c=3, seed=42)
    np.testing.assert_array_equal(one.cluster_of, ref.cluster_of)


def test_partition_file_round_trip(tmp_path):
    keys = blobs(seed=8)
    part = kmeans_fit(keys, c=3, seed=9)
    path = str(tmp_path / "p.ampt")
    save_partition(part, path)
    back = load_partition(path)
    np.testing.assert_array_equal(back.cluster_of, part.cluster_of)
    # centroids stored as f32
    np.testing.assert_allclose(back.centroids, part.centroids, atol=1e-6)
    blob = bytearray(open(path, "rb").read())
    blob[:4] = b"GARB"
    (tmp_path / "bad.ampt").write_bytes(bytes(blob))
    with pytest.raises(FormatError):
        load_partition(str(tmp_path / "bad.ampt"))
    (tmp_path / "cut.ampt").write_bytes(bytes(open(path, "rb").read()[:-2]))
    with pytest.raises(FormatError):
        load_partition(str(tmp_path / "cut.ampt"))


def test_validation():
    keys = blobs(seed=10)
    with pytest.raises(DataError):
        kmeans_fit(keys, c=0, seed=0)
    with pytest.raises(DataError):
        kmeans_fit(keys, c=keys.rows + 1, seed=0)
    with pytest.raises(DataError):
        select_balanced(keys, c=2, seed=0, restarts=0)
