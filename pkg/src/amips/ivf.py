"""Inverted-file search over a k-means coarse quantizer.

Keys are bucketed by nearest centroid at build time. A query ranks cells by
inner product against the centroids, opens the best n_probe cells, and scores
their members exactly. The routing query and the scoring query may differ:
the "mapped" strategy routes with a predicted optimal key while still scoring
candidates with the original query, so at full probe depth it degrades to
exact search.

Cost accounting (2 flops per multiply-add): cell ranking is 2*d*C, candidate
scoring is 2*d*(members opened), and mapped queries pay the model cost once.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .cluster import Partition, kmeans_fit
from .errors import DataError
from .exact import TargetSet, build_targets, top_k
from .metrics import flops_model_forward, flops_model_gradient
from .nets import NetParams, NetSpec, predict_keys
from .store import EmbeddingStore, normalize_rows

SWEEP_HEADER = "strategy,model_size,noise_std,n_probe,k,recall,mrr,mean_flops"


@dataclass(frozen=True)
class IvfIndex:
    keys: EmbeddingStore
    partition: Partition
    lists: tuple = field(repr=False)

    @property
    def cells(self) -> int:
        return self.partition.c

    @property
    def dim(self) -> int:
        return self.keys.dim


def default_cells(n: int) -> int:
    return max(1, int(round(np.sqrt(n))))


def build_ivf(keys: EmbeddingStore, cells: int = None, seed: int = 0,
              partition: Partition = None) -> IvfIndex:
    """Cluster keys into cells (default about sqrt(n)) and bucket them."""
    if partition is None:
        if cells is None:
            cells = default_cells(keys.rows)
        partition = kmeans_fit(keys, cells, seed=seed)
    elif partition.n != keys.rows:
        raise DataError("partition does not cover the key store")
    return IvfIndex(keys=keys, partition=partition,
                    lists=partition.member_lists())


def search_ivf(index: IvfIndex, x, n_probe: int, k: int, route_query=None):
    """Top-k keys by <x, key> among the n_probe best cells.

    Cells are ranked by inner product between route_query (default x) and the
    centroids, ties to the lowest cell id; candidate ties break to the lowest
    key index. Returns (indices, values, flops). Fewer than k results come
    back only when the opened cells hold fewer than k keys.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (index.dim,):
        raise DataError(f"query shape {x.shape} does not match dim {index.dim}")
    if not 1 <= n_probe <= index.cells:
        raise DataError(f"n_probe must be in [1, {index.cells}]")
    r = x if route_query is None else np.asarray(route_query, dtype=np.float64)
    cell_scores = index.partition.centroids @ r
    order = np.argsort(-cell_scores, kind="stable")[:n_probe]
    cand = np.sort(np.concatenate([index.lists[j] for j in order]))
    vals = index.keys.f64()[cand] @ x
    take = np.argsort(-vals, kind="stable")[: min(k, cand.size)]
    flops = 2 * index.dim * index.cells + 2 * index.dim * cand.size
    return cand[take], vals[take], flops


@dataclass(frozen=True)
class Strategy:
    """How the routing query is produced ("natural" keeps the query itself)."""

    name: str  # "natural" or "mapped"
    label: str = ""
    spec: NetSpec = None
    params: NetParams = None

    def __post_init__(self):
        if self.name not in ("natural", "mapped"):
            raise DataError(f"unknown strategy {self.name!r}")
        if self.name == "mapped" and (self.spec is None or self.params is None):
            raise DataError("mapped strategies need spec and params")


def route_queries(strategy: Strategy, queries: EmbeddingStore):
    """Routing vectors plus the per-query model cost of producing them."""
    X = queries.f64()
    if strategy.name == "natural":
        return X, 0
    if strategy.spec.c != 1:
        raise DataError("mapped routing needs a single-key (c=1) model")
    preds = predict_keys(strategy.spec, strategy.params, X)[:, 0, :]
    extra = flops_model_forward(strategy.spec)
    if strategy.spec.family == "supportnet":
        extra += flops_model_gradient(strategy.spec)
    return preds, extra


def nprobe_sweep(index: IvfIndex, strategies, queries: EmbeddingStore,
                 targets: TargetSet, n_probes, k: int,
                 noise_std: float = 0.0) -> list:
    """Recall/MRR/cost rows over strategies x probe depths.

    targets must be the global (c=1) target set for these queries. Recall is
    "true best key in the returned top-k"; MRR uses its rank inside that list.
    """
    if targets.clusters != 1 or targets.count != queries.rows:
        raise DataError("targets must be global and match queries")
    truth = targets.key_index[:, 0]
    rows = []
    for strategy in strategies:
        routed, extra = route_queries(strategy, queries)
        X = queries.f64()
        for n_probe in n_probes:
            hits = 0
            rr = 0.0
            flops_sum = 0.0
            for i in range(queries.rows):
                idx, _, flops = search_ivf(index, X[i], int(n_probe), k,
                                           route_query=routed[i])
                pos = np.flatnonzero(idx == truth[i])
                if pos.size:
                    hits += 1
                    rr += 1.0 / (1.0 + pos[0])
                flops_sum += flops + extra
            rows.append({"strategy": strategy.name, "model_size": strategy.label,
                         "noise_std": float(noise_std), "n_probe": int(n_probe),
                         "k": int(k), "recall": hits / queries.rows,
                         "mrr": rr / queries.rows,
                         "mean_flops": flops_sum / queries.rows})
    return rows


def perturb_queries(queries: EmbeddingStore, noise_std: float,
                    seed: int) -> EmbeddingStore:
    """Gaussian-perturbed, renormalized copies; std 0 returns the input."""
    if noise_std < 0:
        raise DataError("noise_std must be >= 0")
    if noise_std == 0.0:
        return queries
    rng = np.random.default_rng(seed)
    noisy = queries.f64() + noise_std * rng.standard_normal(queries.data.shape)
    return normalize_rows(EmbeddingStore(noisy, kind="query"))


def ood_sweep(index: IvfIndex, strategies, queries: EmbeddingStore,
              noise_stds, n_probes, k: int, seed: int = 0):
    """Sweeps under query drift, plus the natural-minus-mapped MRR gap.

    Targets are recomputed exactly for each perturbed query set, so recall
    stays grounded as the queries leave the training distribution. Returns
    (rows, gaps); gaps hold one dict per (noise_std, mapped label, n_probe).
    """
    rows = []
    gaps = []
    for j, std in enumerate(noise_stds):
        moved = perturb_queries(queries, float(std), seed + j)
        targets = build_targets(moved, index.keys)
        batch = nprobe_sweep(index, strategies, moved, targets, n_probes, k,
                             noise_std=float(std))
        rows.extend(batch)
        natural = {r["n_probe"]: r["mrr"] for r in batch
                   if r["strategy"] == "natural"}
        for r in batch:
            if r["strategy"] != "mapped":
                continue
            if r["n_probe"] not in natural:
                raise DataError("gap needs a natural strategy in the sweep")
            gaps.append({"noise_std": float(std), "model_size": r["model_size"],
                         "n_probe": r["n_probe"],
                         "mrr_gap": natural[r["n_probe"]] - r["mrr"]})
    return rows, gaps


def write_sweep_rows(rows, path: str) -> None:
    names = SWEEP_HEADER.split(",")
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=names)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            out["recall"] = f"{row['recall']:.6f}"
            out["mrr"] = f"{row['mrr']:.6f}"
            out["mean_flops"] = f"{row['mean_flops']:.10g}"
            writer.writerow(out)


def oracle_check(index: IvfIndex, queries: EmbeddingStore, k: int) -> bool:
    """True when full-probe search reproduces exact top-k on every query."""
    X = queries.f64()
    for i in range(queries.rows):
        idx, _, _ = search_ivf(index, X[i], index.cells, k)
        _, want = top_k(index.keys, X[i], k)
        if not np.array_equal(idx, want):
            return False
    return True
