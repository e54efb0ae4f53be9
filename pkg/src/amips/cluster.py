"""Deterministic k-means partitions of a key store.

Seeding is k-means++, iteration is Lloyd's algorithm to an assignment
fixpoint (or max_iters), distances are Euclidean in float64, and every tie
breaks to the lowest index. Empty clusters are repaired by stealing the point
farthest from its current centroid. select_balanced reruns the fit under
derived seeds and keeps the clustering whose sizes have the lowest
coefficient of variation.

Partition files ("AMPT"):

    magic     4 bytes  b"AMPT"
    c         u32 LE
    n         u64 LE
    cluster   n u32 LE         per-key cluster id
    centroids c*d f32 LE       row-major; d inferred from the file size
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .store import EmbeddingStore, _atomic_write

PARTITION_MAGIC = b"AMPT"
_P_HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True)
class Partition:
    """Cluster ids per key plus the centroid matrix."""

    cluster_of: np.ndarray  # (n,) int32
    centroids: np.ndarray  # (c, d) float64

    def __post_init__(self):
        ids = np.ascontiguousarray(self.cluster_of, dtype=np.int32)
        cents = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if ids.ndim != 1 or cents.ndim != 2:
            raise DataError("partition arrays have wrong rank")
        if ids.size and (ids.min() < 0 or ids.max() >= cents.shape[0]):
            raise DataError("cluster id out of range")
        object.__setattr__(self, "cluster_of", ids)
        object.__setattr__(self, "centroids", cents)

    @property
    def c(self) -> int:
        return self.centroids.shape[0]

    @property
    def n(self) -> int:
        return self.cluster_of.shape[0]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.cluster_of, minlength=self.c)

    def member_lists(self):
        """Ascending key indices per cluster."""
        order = np.argsort(self.cluster_of, kind="stable")
        bounds = np.searchsorted(self.cluster_of[order], np.arange(self.c + 1))
        return [order[bounds[j]:bounds[j + 1]].astype(np.int64) for j in range(self.c)]


def _plusplus_init(data: np.ndarray, c: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: spread initial centroids by squared distance."""
    n = data.shape[0]
    centroids = np.empty((c, data.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centroids[0] = data[first]
    d2 = np.sum((data - centroids[0]) ** 2, axis=1)
    for j in range(1, c):
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining points coincide with a centroid; pick uniformly
            pick = int(rng.integers(n))
        else:
            pick = int(rng.choice(n, p=d2 / total))
        centroids[j] = data[pick]
        d2 = np.minimum(d2, np.sum((data - centroids[j]) ** 2, axis=1))
    return centroids


def _assign(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||x-z||^2 = ||x||^2 - 2<x,z> + ||z||^2; the ||x||^2 term is constant
    # per row, so it cannot change the argmin.
    d2 = -2.0 * data @ centroids.T + np.sum(centroids**2, axis=1)
    return np.argmin(d2, axis=1).astype(np.int32)  # first min = lowest cluster id


def _repair_empty(data, centroids, assign):
    """Give each empty cluster the point farthest from its own centroid."""
    c = centroids.shape[0]
    for j in np.flatnonzero(np.bincount(assign, minlength=c) == 0):
        resid = data - centroids[assign]
        dist = np.einsum("nd,nd->n", resid, resid)
        sizes = np.bincount(assign, minlength=c)
        dist[sizes[assign] <= 1] = -1.0  # singletons must keep their point
        assign[int(np.argmax(dist))] = j
    return assign


def kmeans_fit(keys: EmbeddingStore, c: int, seed: int, max_iters: int = 100) -> Partition:
    """Lloyd's k-means with k-means++ seeding, deterministic in seed."""
    if not 1 <= c <= keys.rows:
        raise DataError(f"c must be in [1, {keys.rows}], got {c}")
    if max_iters < 1:
        raise DataError(f"max_iters must be >= 1, got {max_iters}")
    data = keys.f64()
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(data, c, rng)
    prev = None
    for _ in range(max_iters):
        assign = _assign(data, centroids)
        assign = _repair_empty(data, centroids, assign)
        if prev is not None and np.array_equal(assign, prev):
            break
        for j in range(c):
            centroids[j] = data[assign == j].mean(axis=0)
        prev = assign
    return Partition(cluster_of=prev, centroids=centroids)


def balance_score(partition: Partition) -> float:
    """Coefficient of variation of cluster sizes; 0 means perfectly even."""
    sizes = partition.sizes().astype(np.float64)
    return float(sizes.std() / sizes.mean())


def select_balanced(keys: EmbeddingStore, c: int, seed: int, restarts: int = 10,
                    max_iters: int = 100) -> Partition:
    """Fit `restarts` clusterings under seeds seed+0..seed+restarts-1 and keep
    the most size-balanced one (ties to the lowest restart index)."""
    if restarts < 1:
        raise DataError(f"restarts must be >= 1, got {restarts}")
    best = None
    best_score = np.inf
    for r in range(restarts):
        part = kmeans_fit(keys, c, seed + r, max_iters=max_iters)
        score = balance_score(part)
        if score < best_score:
            best, best_score = part, score
    return best


def save_partition(partition: Partition, path: str) -> None:
    header = _P_HEADER.pack(PARTITION_MAGIC, partition.c, partition.n)
    body = partition.cluster_of.astype("<u4").tobytes()
    body += partition.centroids.astype("<f4").tobytes()
    _atomic_write(path, header + body)


def load_partition(path: str) -> Partition:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _P_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, c, n = _P_HEADER.unpack_from(blob)
    if magic != PARTITION_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    ids_bytes = n * 4
    payload = blob[_P_HEADER.size:]
    if len(payload) < ids_bytes:
        raise FormatError(f"{path}: truncated cluster ids")
    cent_bytes = len(payload) - ids_bytes
    if c == 0 or cent_bytes % (4 * c) != 0:
        raise FormatError(f"{path}: centroid payload not divisible by c={c}")
    d = cent_bytes // (4 * c)
    if d < 1:
        raise FormatError(f"{path}: missing centroid payload")
    ids = np.frombuffer(payload, dtype="<u4", count=n).astype(np.int32)
    cents = np.frombuffer(payload, dtype="<f4", offset=ids_bytes).reshape(c, d)
    return Partition(cluster_of=ids, centroids=cents.astype(np.float64))
