"""Text corpora to AMIP embedding stores: dedup, encode, write."""

from .bridge import (AMIP_HEADER, AMIP_MAGIC, AMIP_VERSION, BridgeError,
                     CorpusSpec, dedup_lines, encode_corpus, hashed_encode,
                     read_lines, resolve_encoder, write_amip)

__version__ = "0.1.0"

__all__ = [
    "AMIP_HEADER", "AMIP_MAGIC", "AMIP_VERSION", "BridgeError", "CorpusSpec",
    "dedup_lines", "encode_corpus", "hashed_encode", "read_lines",
    "resolve_encoder", "write_amip", "__version__",
]
