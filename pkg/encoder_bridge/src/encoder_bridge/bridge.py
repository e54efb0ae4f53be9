"""Turn raw text corpora into AMIP embedding stores.

The pipeline is deliberately small: read newline-delimited text, drop exact
duplicate lines (first occurrence wins, order otherwise preserved), encode
to vectors, L2-normalize, and write the 24-byte-header AMIP binary format
that the search library consumes:

    magic   4 bytes  b"AMIP"
    version u32 LE   1
    rows    u64 LE
    dim     u32 LE
    dtype   u8       0 = float32
    pad     3 bytes  zero

followed by the row-major float32 payload.

Two encoder families resolve by model name. Names starting with
"hashed-ngram" select a built-in feature-hashing encoder that needs no
downloads and no weights: character 3..5-grams and word unigrams, each
hashed to a signed bucket, counts accumulated and normalized. It is not a
semantic encoder, but it is deterministic across runs and platforms, which
makes it the right default for tests and offline pipelines. Any other name
is passed to sentence-transformers, used instruction-free: raw strings in,
vectors out, no prompts or task prefixes.
"""

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

AMIP_HEADER = struct.Struct("<4sIQIB3s")
AMIP_MAGIC = b"AMIP"
AMIP_VERSION = 1

HASHED_PREFIX = "hashed-ngram"


class BridgeError(Exception):
    """Bad corpus, unavailable encoder, or a contract violation."""


@dataclass(frozen=True)
class CorpusSpec:
    """One encoding job: two text files, an encoder, an expected width."""

    queries_path: str
    passages_path: str
    model_name: str
    out_dim: int

    def __post_init__(self):
        if self.out_dim < 1:
            raise BridgeError(f"out_dim must be >= 1, got {self.out_dim}")
        if not self.model_name:
            raise BridgeError("model_name must be non-empty")


def read_lines(path: str) -> list:
    """Newline-delimited text, trailing newlines stripped, blanks dropped."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [line.rstrip("\n").rstrip("\r") for line in fh]
    except OSError as err:
        raise BridgeError(f"cannot read {path}: {err}") from err
    lines = [line for line in lines if line]
    if not lines:
        raise BridgeError(f"{path}: no non-empty lines")
    return lines


def dedup_lines(lines) -> list:
    """Exact string dedup, keeping first occurrences in order."""
    seen = set()
    out = []
    for line in lines:
        if line not in seen:
            seen.add(line)
            out.append(line)
    return out


# --- encoders -------------------------------------------------------------


def _hashed_features(text: str):
    """Word unigrams plus character 3..5-grams of the lowercased text."""
    low = text.lower()
    for word in low.split():
        yield "w:" + word
    padded = " " + " ".join(low.split()) + " "
    for n in (3, 4, 5):
        for i in range(len(padded) - n + 1):
            yield f"c{n}:" + padded[i:i + n]


def hashed_encode(texts, dim: int) -> np.ndarray:
    """Signed feature hashing into dim buckets, one L2-normalized row per text.

    blake2b keeps the mapping stable across processes and platforms; the top
    bit picks the sign so collisions cancel instead of piling up.
    """
    out = np.zeros((len(texts), dim), dtype=np.float64)
    for row, text in enumerate(texts):
        for feat in _hashed_features(text):
            digest = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
            value = int.from_bytes(digest, "little")
            sign = 1.0 if value & (1 << 63) else -1.0
            out[row, value % dim] += sign
    norms = np.linalg.norm(out, axis=1)
    if np.any(norms < 1e-12):
        bad = int(np.argmin(norms))
        raise BridgeError(f"text row {bad} encoded to a zero vector")
    return out / norms[:, None]


class _HashedEncoder:
    def __init__(self, dim: int):
        self.dim = dim

    def encode(self, texts, batch_size: int) -> np.ndarray:
        del batch_size  # single pass; hashing has no batching to speak of
        return hashed_encode(texts, self.dim)


class _SentenceEncoder:
    def __init__(self, model_name: str, device: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as err:
            raise BridgeError(
                f"model {model_name!r} needs sentence-transformers installed") from err
        try:
            self._model = SentenceTransformer(model_name, device=device)
        except Exception as err:  # hub/network/weights failures vary widely
            raise BridgeError(f"cannot load encoder {model_name!r}: {err}") from err
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, texts, batch_size: int) -> np.ndarray:
        # Raw strings in, instruction-free; normalization is done by us so
        # both encoder families share one code path.
        vecs = self._model.encode(list(texts), batch_size=batch_size,
                                  convert_to_numpy=True,
                                  normalize_embeddings=False)
        return np.asarray(vecs, dtype=np.float64)


def resolve_encoder(model_name: str, out_dim: int, device: str = "cpu"):
    """Model name -> encoder object with .dim and .encode(texts, batch_size)."""
    if model_name.startswith(HASHED_PREFIX):
        return _HashedEncoder(out_dim)
    return _SentenceEncoder(model_name, device)


# --- AMIP output ------------------------------------------------------------


def write_amip(vectors: np.ndarray, path: str) -> None:
    """Write one float32 embedding store, atomically."""
    arr = np.ascontiguousarray(vectors, dtype="<f4")
    if arr.ndim != 2:
        raise BridgeError(f"embeddings must be 2-D, got shape {arr.shape}")
    header = AMIP_HEADER.pack(AMIP_MAGIC, AMIP_VERSION, arr.shape[0],
                              arr.shape[1], 0, b"\0\0\0")
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".",
                               prefix=os.path.basename(path) + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header + arr.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _normalize(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms < 1e-12):
        raise BridgeError("encoder produced a zero vector")
    return vectors / norms[:, None]


def encode_corpus(spec: CorpusSpec, out_dir: str, batch_size: int = 64,
                  device: str = "cpu") -> dict:
    """Dedup, encode, and write queries.amip / keys.amip plus manifest.json.

    Returns the manifest dict: model name, per-file line and row counts, and
    the embedding width. Queries and passages are deduped independently; rows
    come out in first-occurrence order, unit-norm, float32.
    """
    raw_queries = read_lines(spec.queries_path)
    raw_passages = read_lines(spec.passages_path)
    queries = dedup_lines(raw_queries)
    passages = dedup_lines(raw_passages)

    encoder = resolve_encoder(spec.model_name, spec.out_dim, device)
    if encoder.dim != spec.out_dim:
        raise BridgeError(f"encoder {spec.model_name!r} outputs d={encoder.dim}, "
                          f"expected out_dim={spec.out_dim}")

    os.makedirs(out_dir, exist_ok=True)
    q_vecs = _normalize(encoder.encode(queries, batch_size))
    p_vecs = _normalize(encoder.encode(passages, batch_size))
    if q_vecs.shape[1] != spec.out_dim or p_vecs.shape[1] != spec.out_dim:
        raise BridgeError("encoder output width changed between calls")

    write_amip(q_vecs, os.path.join(out_dir, "queries.amip"))
    write_amip(p_vecs, os.path.join(out_dir, "keys.amip"))

    manifest = {
        "model": spec.model_name,
        "dim": spec.out_dim,
        "queries": {"lines": len(raw_queries), "rows": len(queries)},
        "passages": {"lines": len(raw_passages), "rows": len(passages)},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
