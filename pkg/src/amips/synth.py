"""Synthetic benchmark data: clustered unit keys and drifted unit queries.

Keys are drawn from a mixture of spherical Gaussians whose centers sit on the
unit sphere, then renormalized. Queries come from the same mixture after each
center is nudged by a random shift, so a query's direction correlates with a
key cluster without sitting exactly on it. That drift is what makes routing
with raw queries lossy and routing with predicted keys useful.

Mode spreads follow a geometric ramp (spread_ramp is the widest-to-narrowest
ratio), so cluster radii differ. Renormalized wide clusters have short mean
vectors, which makes a plain centroid scorer systematically underrate them;
their maximum inner product stays competitive. A scorer that models the max
rather than the mean can exploit that.

All draws come from one seeded generator, so a config reproduces its arrays
bit-for-bit.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .store import EmbeddingStore, normalize_rows


@dataclass(frozen=True)
class SynthConfig:
    n_keys: int = 2048
    n_train: int = 4096
    n_val: int = 512
    dim: int = 16
    modes: int = 10
    key_spread: float = 0.35
    query_spread: float = 0.04
    mode_shift: float = 0.25
    spread_ramp: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if min(self.n_keys, self.n_train, self.n_val, self.dim, self.modes) < 1:
            raise DataError("counts, dim, and modes must be positive")
        if self.modes > self.n_keys:
            raise DataError("more modes than keys")
        if min(self.key_spread, self.query_spread, self.mode_shift) < 0:
            raise DataError("spreads must be >= 0")
        if self.spread_ramp < 1:
            raise DataError("spread_ramp must be >= 1")

    def mode_spreads(self) -> np.ndarray:
        """Per-mode key spreads: geometric mean key_spread, ratio spread_ramp."""
        r = np.sqrt(self.spread_ramp)
        return self.key_spread * np.geomspace(1.0 / r, r, self.modes)


def _mixture(rng, centers, count, spreads, kind):
    # Round-robin mode assignment keeps the mixture exactly balanced.
    assign = np.arange(count) % centers.shape[0]
    spreads = np.broadcast_to(spreads, centers.shape[0])
    noise = rng.standard_normal((count, centers.shape[1]))
    raw = centers[assign] + spreads[assign, None] * noise
    return normalize_rows(EmbeddingStore(raw, kind=kind))


def make_fixture(cfg: SynthConfig = SynthConfig()):
    """Build (keys, train queries, val queries) for one config."""
    rng = np.random.default_rng(cfg.seed)
    centers = rng.standard_normal((cfg.modes, cfg.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    keys = _mixture(rng, centers, cfg.n_keys, cfg.mode_spreads(), "key")
    shifted = centers + cfg.mode_shift * rng.standard_normal(centers.shape)
    shifted /= np.linalg.norm(shifted, axis=1, keepdims=True)
    queries = _mixture(rng, shifted, cfg.n_train + cfg.n_val, cfg.query_spread,
                       "query")
    train = EmbeddingStore(queries.data[: cfg.n_train], kind="query")
    val = EmbeddingStore(queries.data[cfg.n_train:], kind="query")
    return keys, train, val


def small_fixture(seed: int = 0):
    """A fast variant for tests: same geometry, a fraction of the rows."""
    cfg = replace(SynthConfig(), n_keys=256, n_train=512, n_val=128, modes=5,
                  seed=seed)
    return make_fixture(cfg)
