"""Row-major embedding stores and the AMIP binary format.

A store is an immutable (rows, dim) float32 matrix tagged as holding queries
or keys. Files carry a 24-byte header followed by the raw float32 payload:

    magic   4 bytes  b"AMIP"
    version u32 LE   currently 1
    rows    u64 LE
    dim     u32 LE
    dtype   u8       0 = float32
    pad     3 bytes  zero

All math that feeds decisions (norms, noise) runs in float64 and is cast back
to float32, so a save/load round trip is bit-exact.
"""

import os
import struct
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

MAGIC = b"AMIP"
VERSION = 1
_DTYPE_F32 = 0
_HEADER = struct.Struct("<4sIQIB3s")

KINDS = ("query", "key")


@dataclass(frozen=True)
class EmbeddingStore:
    """Immutable float32 row matrix with a query/key tag."""

    data: np.ndarray
    kind: str = "key"

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise DataError(f"store data must be 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            bad = int(np.argwhere(~np.isfinite(arr).all(axis=1))[0, 0])
            raise DataError(f"non-finite entry in row {bad}")
        if self.kind not in KINDS:
            raise DataError(f"kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def f64(self) -> np.ndarray:
        """Float64 view of the payload for accumulation-sensitive math."""
        return self.data.astype(np.float64)


@dataclass(frozen=True)
class AugmentConfig:
    """Noise-and-renormalize query expansion settings."""

    noise_std: float = 0.02
    factor: int = 10
    seed: int = 0


def save_store(store: EmbeddingStore, path: str) -> None:
    header = _HEADER.pack(MAGIC, VERSION, store.rows, store.dim, _DTYPE_F32, b"\0\0\0")
    _atomic_write(path, header + store.data.tobytes())


def load_store(path: str, kind: str = "key") -> EmbeddingStore:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise FormatError(f"{path}: truncated header ({len(blob)} bytes)")
    magic, version, rows, dim, dtype, _pad = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dtype != _DTYPE_F32:
        raise FormatError(f"{path}: dtype tag {dtype} is not float32 (0)")
    want = rows * dim * 4
    payload = blob[_HEADER.size:]
    if len(payload) != want:
        raise FormatError(f"{path}: truncated payload ({len(payload)} of {want} bytes)")
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, dim)
    return EmbeddingStore(data=data, kind=kind)


def normalize_rows(store: EmbeddingStore) -> EmbeddingStore:
    """Scale every row to unit Euclidean norm. Zero rows are an error."""
    data = store.f64()
    norms = np.linalg.norm(data, axis=1)
    tiny = norms < 1e-12
    if np.any(tiny):
        raise DataError(f"cannot normalize zero row {int(np.argmax(tiny))}")
    return EmbeddingStore(data=(data / norms[:, None]).astype(np.float32), kind=store.kind)


def dedup_rows(store: EmbeddingStore) -> EmbeddingStore:
    """Drop rows that are byte-identical to an earlier row. Order-stable."""
    seen = {}
    keep = []
    for i in range(store.rows):
        sig = store.data[i].tobytes()
        if sig not in seen:
            seen[sig] = i
            keep.append(i)
    if len(keep) == store.rows:
        return store
    return EmbeddingStore(data=store.data[keep], kind=store.kind)


def augment_queries(store: EmbeddingStore, cfg: AugmentConfig) -> EmbeddingStore:
    """Expand a query store: each row becomes cfg.factor noisy unit-norm copies.

    Copies of row i occupy rows i*factor .. (i+1)*factor-1 of the result.
    Gaussian noise (std cfg.noise_std per coordinate) is added to every copy,
    then rows are renormalized; factor=1, std=0 reproduces the input.
    """
    if store.kind != "query":
        raise DataError("augment_queries expects a query store")
    if cfg.factor < 1:
        raise DataError(f"factor must be >= 1, got {cfg.factor}")
    rng = np.random.default_rng(cfg.seed)
    base = np.repeat(store.f64(), cfg.factor, axis=0)
    noisy = base + cfg.noise_std * rng.standard_normal(base.shape)
    norms = np.linalg.norm(noisy, axis=1)
    flat = norms < 1e-12
    if np.any(flat):
        # one resample pass for rows the noise cancelled exactly
        idx = np.flatnonzero(flat)
        noisy[idx] = base[idx] + cfg.noise_std * rng.standard_normal((idx.size, base.shape[1]))
        norms = np.linalg.norm(noisy, axis=1)
        if np.any(norms < 1e-12):
            raise DataError(f"augmented row {int(np.argmax(norms < 1e-12))} is degenerate")
    return EmbeddingStore(data=(noisy / norms[:, None]).astype(np.float32), kind="query")


def split_train_val(store: EmbeddingStore, val_count: int, seed: int):
    """Disjoint (train, val) split; val rows are drawn by seeded permutation.

    Rows keep their original relative order inside each side.
    """
    if not 0 <= val_count <= store.rows:
        raise DataError(f"val_count {val_count} out of range for {store.rows} rows")
    perm = np.random.default_rng(seed).permutation(store.rows)
    val_idx = np.sort(perm[:val_count])
    train_idx = np.sort(perm[val_count:])
    train = EmbeddingStore(data=store.data[train_idx], kind=store.kind)
    val = EmbeddingStore(data=store.data[val_idx], kind=store.kind)
    return train, val


def _atomic_write(path: str, blob: bytes) -> None:
    """Write via a temp file in the target directory so failures leave nothing."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
