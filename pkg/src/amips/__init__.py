"""Amortized maximum-inner-product search with learned support functions.

The package splits into data plumbing (store, exact, cluster), model code
(nets, autodiff, train, metrics), retrieval experiments (router, ivf, synth),
and a pipeline CLI (cli). Binary formats: AMIP embedding stores, AMTG target
sets, AMPT partitions, AMNP network parameters.
"""

from .cluster import (Partition, balance_score, kmeans_fit, load_partition,
                      save_partition, select_balanced)
from .errors import AmipsError, DataError, FormatError, NumericError
from .exact import (TargetSet, build_targets, flops_exact_search, load_targets,
                    save_targets, support_and_argmax, top_k)
from .ivf import (IvfIndex, Strategy, build_ivf, default_cells, nprobe_sweep,
                  ood_sweep, perturb_queries, search_ivf, write_sweep_rows)
from .metrics import (CostCurve, CurvePoint, MetricReport, flops_model_forward,
                      flops_model_gradient, match_rate, metric_report, mrr,
                      recall_at_k, relative_transport_error)
from .nets import (BudgetSpec, NetParams, NetSpec, activation, count_budget_params,
                   count_total_params, forward, init_params, injection_layers,
                   input_gradient, load_params, n_x_for_policy, predict_keys,
                   save_params, solve_width)
from .router import (RoutePlan, routed_search, routing_accuracy, routing_curve,
                     score_clusters, write_routing_curve)
from .store import (AugmentConfig, EmbeddingStore, augment_queries, dedup_rows,
                    load_store, normalize_rows, save_store, split_train_val)
from .synth import SynthConfig, make_fixture
from .train import (LossWeights, TrainConfig, TrainData, TrainResult, losses,
                    param_gradients, train_model, write_history)

__version__ = "0.1.0"

__all__ = [
    "AmipsError", "AugmentConfig", "BudgetSpec", "CostCurve", "CurvePoint",
    "DataError", "EmbeddingStore", "FormatError", "IvfIndex", "LossWeights",
    "MetricReport", "NetParams", "NetSpec", "NumericError", "Partition",
    "RoutePlan", "Strategy", "SynthConfig", "TargetSet", "TrainConfig",
    "TrainData", "TrainResult", "activation", "augment_queries",
    "balance_score", "build_ivf", "build_targets", "count_budget_params",
    "count_total_params", "dedup_rows", "default_cells", "flops_exact_search",
    "flops_model_forward", "flops_model_gradient", "forward", "init_params",
    "injection_layers", "input_gradient", "kmeans_fit", "load_params",
    "load_partition", "load_store", "load_targets", "losses", "make_fixture",
    "match_rate", "metric_report", "mrr", "n_x_for_policy", "normalize_rows",
    "nprobe_sweep", "ood_sweep", "param_gradients", "perturb_queries",
    "predict_keys", "recall_at_k", "relative_transport_error", "routed_search",
    "routing_accuracy", "routing_curve", "save_params", "save_partition",
    "save_store", "save_targets", "score_clusters", "search_ivf",
    "select_balanced", "solve_width", "split_train_val", "support_and_argmax",
    "top_k", "train_model", "write_history", "write_routing_curve",
    "write_sweep_rows",
]
