"""Exact inner-product search: the ground truth every model is judged against.

For a key set Y and query x the support value is max_y <x, y> and the optimal
key is its argmax. All reductions accumulate in float64 and break ties by
lowest key index so results are reproducible bit-for-bit.

Target files ("AMTG") persist only the argmax indices; support values are
recomputed from the stores on load:

    magic   4 bytes  b"AMTG"
    version u32 LE   currently 1
    queries u64 LE
    c       u32 LE   clusters per query
    index   queries*c u64 LE, row-major
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataError, FormatError
from .store import EmbeddingStore, _atomic_write

TARGET_MAGIC = b"AMTG"
TARGET_VERSION = 1
_T_HEADER = struct.Struct("<4sIQI")


def support_and_argmax(keys: EmbeddingStore, x: np.ndarray, members=None):
    """Exact support value and optimal key for one query.

    Args:
        keys: key store.
        x: query vector of length keys.dim.
        members: optional array of key indices restricting the search.

    Returns:
        (value, index) with index into the full store. Ties go to the lowest
        index.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != keys.dim:
        raise DataError(f"query dim {x.shape[0]} != key dim {keys.dim}")
    if members is None:
        scores = keys.f64() @ x
        best = int(np.argmax(scores))
        return float(scores[best]), best
    members = np.asarray(members, dtype=np.int64)
    if members.size == 0:
        raise DataError("empty member subset")
    # np.argmax takes the first maximum; scanning members in ascending order
    # keeps the lowest-global-index tie rule intact.
    members = np.sort(members)
    scores = keys.data[members].astype(np.float64) @ x
    local = int(np.argmax(scores))
    return float(scores[local]), int(members[local])


def top_k(keys: EmbeddingStore, x: np.ndarray, k: int):
    """Exact top-k keys by inner product, descending, ties by lowest index.

    Returns (values, indices) of length min(k, rows).
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != keys.dim:
        raise DataError(f"query dim {x.shape[0]} != key dim {keys.dim}")
    scores = keys.f64() @ x
    order = np.argsort(-scores, kind="stable")[: min(k, keys.rows)]
    return scores[order], order.astype(np.int64)


def flops_exact_search(n: int, d: int) -> int:
    """Cost of one exhaustive scan: n*d multiply-adds, 2 flops each."""
    return 2 * n * d


@dataclass(frozen=True)
class TargetSet:
    """Per-query, per-cluster optimal keys and their support values."""

    key_index: np.ndarray  # (N, c) int64, global key indices
    support_value: np.ndarray  # (N, c) float64

    def __post_init__(self):
        idx = np.ascontiguousarray(self.key_index, dtype=np.int64)
        val = np.ascontiguousarray(self.support_value, dtype=np.float64)
        if idx.ndim != 2 or val.shape != idx.shape:
            raise DataError(f"target shapes disagree: {idx.shape} vs {val.shape}")
        object.__setattr__(self, "key_index", idx)
        object.__setattr__(self, "support_value", val)

    @property
    def count(self) -> int:
        return self.key_index.shape[0]

    @property
    def clusters(self) -> int:
        return self.key_index.shape[1]


def build_targets(queries: EmbeddingStore, keys: EmbeddingStore, partition=None) -> TargetSet:
    """Exact per-cluster argmax for every query.

    With partition=None the whole key set is one cluster (c=1). Member lists
    are scanned in ascending index order so ties resolve to the lowest global
    index.
    """
    if queries.dim != keys.dim:
        raise DataError(f"query dim {queries.dim} != key dim {keys.dim}")
    q = queries.f64()
    kd = keys.f64()
    if partition is None:
        member_lists = [np.arange(keys.rows, dtype=np.int64)]
    else:
        member_lists = partition.member_lists()
    c = len(member_lists)
    idx = np.empty((queries.rows, c), dtype=np.int64)
    val = np.empty((queries.rows, c), dtype=np.float64)
    for j, members in enumerate(member_lists):
        if members.size == 0:
            raise DataError(f"cluster {j} has no members")
        scores = q @ kd[members].T  # (N, |members|)
        local = np.argmax(scores, axis=1)  # first max = lowest index, members ascending
        idx[:, j] = members[local]
        val[:, j] = scores[np.arange(queries.rows), local]
    return TargetSet(key_index=idx, support_value=val)


def save_targets(targets: TargetSet, path: str) -> None:
    header = _T_HEADER.pack(TARGET_MAGIC, TARGET_VERSION, targets.count, targets.clusters)
    _atomic_write(path, header + targets.key_index.astype("<u8").tobytes())


def load_targets(path: str, queries: EmbeddingStore, keys: EmbeddingStore) -> TargetSet:
    """Read indices and recompute support values against the given stores."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _T_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, count, c = _T_HEADER.unpack_from(blob)
    if magic != TARGET_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != TARGET_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    payload = blob[_T_HEADER.size:]
    if len(payload) != count * c * 8:
        raise FormatError(f"{path}: truncated payload")
    idx = np.frombuffer(payload, dtype="<u8").reshape(count, c).astype(np.int64)
    if count != queries.rows:
        raise DataError(f"{path}: {count} target rows for {queries.rows} queries")
    if idx.size and (idx.min() < 0 or idx.max() >= keys.rows):
        raise DataError(f"{path}: key index out of range for {keys.rows} keys")
    vals = np.einsum("nd,ncd->nc", queries.f64(), keys.f64()[idx])
    return TargetSet(key_index=idx, support_value=vals)
