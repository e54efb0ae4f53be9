"""Quality metrics for predicted keys and flop accounting for model calls.

The headline number is the relative transport error

    E_rel = mean_i log( ||y_hat_i - y*_i||^2 / ||x_i - y*_i||^2 )

the log ratio of the prediction's squared distance to the optimal key versus
the query's own distance. The identity predictor scores exactly 0; useful
models go well below -1. RTE = exp(E_rel) is the same thing as a ratio.

Rank metrics (match rate, recall@k, MRR) compare predictions against the key
set by Euclidean distance with ties broken to the lowest key index.

Flop counts follow one convention everywhere: a multiply-add is 2 flops, and
model cost counts matrix-vector products only.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .nets import NetSpec
from .store import EmbeddingStore

EPS_FLOOR = 1e-12
RECALL_KS = (1, 5, 10, 100)

_CHUNK = 512  # query rows per distance block


def relative_transport_error(preds, queries, targets, return_flagged: bool = False):
    """Mean log squared-distance ratio; both sides floored at 1e-12.

    preds/targets may be (N, d) or (N, c, d); queries are (N, d) and are
    broadcast per cluster. With return_flagged, also returns how many
    denominators hit the floor (query coinciding with its target).
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    queries = np.asarray(queries, dtype=np.float64)
    if preds.shape != targets.shape:
        raise DataError(f"pred shape {preds.shape} != target shape {targets.shape}")
    if preds.ndim == 3:
        queries = queries[:, None, :]
    num = np.sum((preds - targets) ** 2, axis=-1)
    den = np.sum((queries - targets) ** 2, axis=-1)
    flagged = int(np.count_nonzero(den < EPS_FLOOR))
    e_rel = float(np.mean(np.log(np.maximum(num, EPS_FLOOR) / np.maximum(den, EPS_FLOOR))))
    if return_flagged:
        return e_rel, flagged
    return e_rel


def _sq_dists(preds: np.ndarray, key_data: np.ndarray) -> np.ndarray:
    """(N, n) squared Euclidean distances in float64."""
    p2 = np.sum(preds**2, axis=1)[:, None]
    k2 = np.sum(key_data**2, axis=1)[None, :]
    return p2 - 2.0 * (preds @ key_data.T) + k2


def _nearest_ranks(preds, keys: EmbeddingStore, target_indices, members=None):
    """1-based rank of each target among keys by distance to the prediction.

    Stable ascending sort makes equal distances rank lower-index first.
    """
    preds = np.asarray(preds, dtype=np.float64)
    target_indices = np.asarray(target_indices, dtype=np.int64)
    key_data = keys.f64()
    if members is not None:
        members = np.sort(np.asarray(members, dtype=np.int64))
        key_data = key_data[members]
        # targets must live inside the subset
        lookup = {int(g): i for i, g in enumerate(members)}
        try:
            target_local = np.array([lookup[int(t)] for t in target_indices])
        except KeyError as exc:
            raise DataError(f"target key {exc} not in member subset") from None
    else:
        target_local = target_indices
    n = key_data.shape[0]
    ranks = np.empty(preds.shape[0], dtype=np.int64)
    for lo in range(0, preds.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, preds.shape[0])
        d2 = _sq_dists(preds[lo:hi], key_data)
        order = np.argsort(d2, axis=1, kind="stable")
        inv = np.empty_like(order)
        rows = np.arange(hi - lo)[:, None]
        inv[rows, order] = np.arange(n)[None, :]
        ranks[lo:hi] = inv[np.arange(hi - lo), target_local[lo:hi]] + 1
    return ranks


def match_rate(preds, keys: EmbeddingStore, target_indices, members=None) -> float:
    """Fraction of predictions whose nearest key is exactly the target."""
    return float(np.mean(_nearest_ranks(preds, keys, target_indices, members) == 1))


def recall_at_k(preds, keys: EmbeddingStore, target_indices, k: int) -> float:
    """Fraction of targets within the k nearest keys of the prediction."""
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    return float(np.mean(_nearest_ranks(preds, keys, target_indices) <= k))


def mrr(preds, keys: EmbeddingStore, target_indices) -> float:
    """Mean reciprocal rank of the target key, ranks 1-based."""
    return float(np.mean(1.0 / _nearest_ranks(preds, keys, target_indices)))


@dataclass(frozen=True)
class MetricReport:
    """One evaluation of a key predictor against exact targets."""

    e_rel: float
    rte: float
    match_rate: float
    recall: dict
    mrr: float

    CSV_HEADER = "e_rel,rte,match_rate," + ",".join(f"recall@{k}" for k in RECALL_KS) + ",mrr"

    def csv_row(self) -> str:
        cells = [f"{self.e_rel:.6f}", f"{self.rte:.6f}", f"{self.match_rate:.6f}"]
        cells += [f"{self.recall[k]:.6f}" for k in RECALL_KS]
        cells.append(f"{self.mrr:.6f}")
        return ",".join(cells)


def metric_report(preds, queries, keys: EmbeddingStore, target_indices,
                  ks=RECALL_KS) -> MetricReport:
    """Full report for c=1 predictions of shape (N, d)."""
    preds = np.asarray(preds, dtype=np.float64)
    target_indices = np.asarray(target_indices, dtype=np.int64).reshape(-1)
    targets = keys.f64()[target_indices]
    e_rel = relative_transport_error(preds, queries, targets)
    ranks = _nearest_ranks(preds, keys, target_indices)
    return MetricReport(
        e_rel=e_rel,
        rte=float(np.exp(e_rel)),
        match_rate=float(np.mean(ranks == 1)),
        recall={k: float(np.mean(ranks <= min(k, keys.rows))) for k in ks},
        mrr=float(np.mean(1.0 / ranks)),
    )


# --- flop accounting ------------------------------------------------------


def flops_model_forward(spec: NetSpec) -> int:
    """2 flops per multiply-add over the three matrix-vector product groups:
    input projections, hidden-to-hidden, output head."""
    macs = ((1 + spec.n_x) * spec.d * spec.h
            + (spec.L - 1) * spec.h * spec.h
            + spec.h * spec.d_out)
    return 2 * macs


def flops_model_gradient(spec: NetSpec) -> int:
    """Input-gradient cost pinned at twice the forward cost."""
    return 2 * flops_model_forward(spec)


@dataclass(frozen=True)
class CurvePoint:
    flops: float
    accuracy: float
    label: str
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CostCurve:
    """Labeled accuracy-versus-flops points, in sweep order."""

    points: tuple

    def __iter__(self):
        return iter(self.points)

    def by_label(self, label: str):
        return [p for p in self.points if p.label == label]
