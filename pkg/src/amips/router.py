"""Cluster routing: pick promising clusters with a cheap scorer, then search
only those exhaustively.

Scorers rank the c clusters of a partition for a query x:

  - "centroid": inner products against cluster centroids, 2*d*c flops.
  - "learned": a trained net; supportnet scores are its c outputs, keynet
    scores are <F_j(x), x>. Cost is pinned at the model's forward flops.

Routing succeeds when the cluster holding the query's true optimal key is
among the k selected. Selection ties break to the lowest cluster index.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .cluster import Partition
from .errors import DataError
from .exact import TargetSet
from .metrics import CostCurve, CurvePoint, flops_model_forward
from .nets import NetParams, NetSpec, forward, predict_keys
from .store import EmbeddingStore

ROUTING_HEADER = "scorer,model_size,k_clusters,flops,routing_accuracy"


@dataclass(frozen=True)
class RoutePlan:
    """A scorer plus how many clusters it may open."""

    scorer: str  # "centroid" or "learned"
    k_clusters: int
    label: str = ""
    spec: NetSpec = None
    params: NetParams = None

    def __post_init__(self):
        if self.scorer not in ("centroid", "learned"):
            raise DataError(f"unknown scorer {self.scorer!r}")
        if self.scorer == "learned" and (self.spec is None or self.params is None):
            raise DataError("learned plans need spec and params")
        if self.k_clusters < 1:
            raise DataError("k_clusters must be >= 1")


def scorer_flops(plan: RoutePlan, partition: Partition, d: int) -> int:
    if plan.scorer == "centroid":
        return 2 * d * partition.c
    return flops_model_forward(plan.spec)


def score_clusters(plan: RoutePlan, partition: Partition, x) -> np.ndarray:
    """Cluster scores for one query or an (N, d) batch (higher is better)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if plan.scorer == "centroid":
        scores = X @ partition.centroids.T
    elif plan.spec.family == "supportnet":
        scores = forward(plan.spec, plan.params, X)
    else:
        K = predict_keys(plan.spec, plan.params, X)  # (N, c, d)
        scores = np.einsum("ncd,nd->nc", K, X)
    if scores.shape[1] != partition.c:
        raise DataError(f"scorer emits {scores.shape[1]} scores for c={partition.c}")
    return scores[0] if single else scores


def _select(scores: np.ndarray, k: int) -> np.ndarray:
    """Top-k cluster ids by score, ties to the lowest id."""
    return np.argsort(-scores, kind="stable", axis=-1)[..., :k]


def routed_search(plan: RoutePlan, partition: Partition, keys: EmbeddingStore, x):
    """Exact argmax restricted to the selected clusters.

    Returns (value, key index, flops); flops = scorer + 2*d*(opened keys).
    """
    x = np.asarray(x, dtype=np.float64)
    scores = score_clusters(plan, partition, x)
    chosen = _select(scores, min(plan.k_clusters, partition.c))
    members = partition.member_lists()
    cand = np.concatenate([members[j] for j in chosen])
    cand = np.sort(cand)
    vals = keys.f64()[cand] @ x
    best = int(np.argmax(vals))
    flops = scorer_flops(plan, partition, keys.dim) + 2 * keys.dim * cand.size
    return float(vals[best]), int(cand[best]), flops


def routing_accuracy(plan: RoutePlan, partition: Partition, keys: EmbeddingStore,
                     queries: EmbeddingStore, targets: TargetSet):
    """Fraction of queries whose optimal key's cluster was selected.

    targets must be a global (c=1) target set. Returns (accuracy, mean flops).
    """
    if targets.clusters != 1:
        raise DataError("routing_accuracy expects global (c=1) targets")
    if targets.count != queries.rows:
        raise DataError("targets do not match queries")
    X = queries.f64()
    scores = score_clusters(plan, partition, X)  # (N, c)
    k = min(plan.k_clusters, partition.c)
    chosen = _select(scores, k)  # (N, k)
    target_cluster = partition.cluster_of[targets.key_index[:, 0]]
    hits = (chosen == target_cluster[:, None]).any(axis=1)
    sizes = partition.sizes()
    opened = sizes[chosen].sum(axis=1)
    flops = scorer_flops(plan, partition, keys.dim) + 2 * keys.dim * opened
    return float(hits.mean()), float(flops.mean())


def routing_curve(plans, partition: Partition, keys: EmbeddingStore,
                  queries: EmbeddingStore, targets: TargetSet) -> CostCurve:
    """Accuracy-vs-flops points for every plan at k = 1..plan.k_clusters."""
    points = []
    for plan in plans:
        for k in range(1, min(plan.k_clusters, partition.c) + 1):
            sub = RoutePlan(scorer=plan.scorer, k_clusters=k, label=plan.label,
                            spec=plan.spec, params=plan.params)
            acc, flops = routing_accuracy(sub, partition, keys, queries, targets)
            points.append(CurvePoint(flops=flops, accuracy=acc, label=plan.label,
                                     extras={"scorer": plan.scorer, "k_clusters": k}))
    return CostCurve(points=tuple(points))


def write_routing_curve(curve: CostCurve, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUTING_HEADER.split(","))
        for p in curve:
            writer.writerow([p.extras["scorer"], p.label, p.extras["k_clusters"],
                             f"{p.flops:.10g}", f"{p.accuracy:.6f}"])
