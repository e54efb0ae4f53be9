"""Training: losses, exact parameter gradients, Adam with a warm cosine
schedule, and an EMA shadow of the parameters.

supportnet minimizes

    w.score  * mean_{i,j} (f_j(x_i) - sigma_ij)^2
  + w.grad   * mean_{i,j} ||d f_j/d x (x_i) - y*_ij||^2
  + w.nonneg * sum_W ||relu(-W)||^2          over convexity-constrained weights

keynet minimizes

    w.key     * mean_{i,j} ||F_j(x_i) - y*_ij||^2
  + w.consist * mean_{i,j} (<F_j(x_i), x_i> - sigma_ij)^2

The gradient term differentiates through the network's input gradient, so
parameter gradients carry second-order terms; they come from replaying the
whole taped computation, input-Jacobian recursion included.

Schedule: linear warmup over a fraction of the horizon to peak*sqrt(B/B_ref),
then cosine decay to zero. EMA decay follows decay_ref^(B/B_ref). Batches are
drawn epoch-wise from a counter-based generator keyed by (seed, epoch), so
histories are reproducible bit for bit.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import metrics as mt
from .cluster import Partition
from .errors import DataError, NumericError
from .exact import TargetSet
from .nets import NetParams, NetSpec, forward, input_gradient, nonneg_names, predict_keys
from .store import EmbeddingStore

HISTORY_HEADER = ("step,lr,loss_total,loss_score,loss_grad,loss_key,"
                  "loss_consist,loss_nonneg,val_erel,val_match_rate")


@dataclass(frozen=True)
class LossWeights:
    score: float = 0.01
    grad: float = 1.0
    key: float = 1.0
    consist: float = 0.01
    nonneg: float = 1.0


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    total_steps: int = 1000
    peak_lr: float = 1e-4
    warmup_frac: float = 0.025
    b_ref: int = 128
    ema_decay_ref: float = 0.999
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    log_every: int = 50


@dataclass
class OptimizerState:
    m: dict
    v: dict
    t: int
    ema: dict

    @classmethod
    def fresh(cls, params: dict) -> "OptimizerState":
        return cls(m={k: np.zeros_like(v) for k, v in params.items()},
                   v={k: np.zeros_like(v) for k, v in params.items()},
                   t=0,
                   ema={k: v.copy() for k, v in params.items()})


@dataclass(frozen=True)
class TrainData:
    """Queries with their exact targets; keys resolve indices to vectors."""

    queries: EmbeddingStore
    targets: TargetSet
    keys: EmbeddingStore
    val_queries: EmbeddingStore = None
    val_targets: TargetSet = None
    partition: Partition = None  # enables per-cluster match rate when c > 1

    def __post_init__(self):
        if self.targets.count != self.queries.rows:
            raise DataError("target rows != query rows")
        if self.val_queries is not None:
            if self.val_targets is None or self.val_targets.count != self.val_queries.rows:
                raise DataError("validation targets missing or mismatched")


def losses(spec: NetSpec, params, X, target_keys, target_scores, w: LossWeights):
    """Total loss and per-part values for one batch.

    X (B, d), target_keys (B, c, d), target_scores (B, c) are constants;
    params entries may be Tensors (taped) or ndarrays (plain evaluation).
    """
    B, c = target_scores.shape
    parts = {}
    if spec.family == "supportnet":
        f = forward(spec, params, X)
        G = input_gradient(spec, params, X)
        parts["score"] = ad.mean(ad.square(ad.sub(f, target_scores)))
        diff = ad.sub(G, target_keys)
        parts["grad"] = ad.mul(ad.reduce_sum(ad.square(diff)), 1.0 / (B * c))
        pen = 0.0
        for name in nonneg_names(spec):
            pen = ad.add(pen, ad.reduce_sum(ad.square(ad.relu(ad.mul(params[name], -1.0)))))
        parts["nonneg"] = pen
        total = ad.add(ad.add(ad.mul(parts["score"], w.score),
                              ad.mul(parts["grad"], w.grad)),
                       ad.mul(parts["nonneg"], w.nonneg))
    else:
        F = predict_keys(spec, params, X)
        diff = ad.sub(F, target_keys)
        parts["key"] = ad.mul(ad.reduce_sum(ad.square(diff)), 1.0 / (B * c))
        dots = ad.einsum("bjd,bd->bj", F, X)
        parts["consist"] = ad.mean(ad.square(ad.sub(dots, target_scores)))
        total = ad.add(ad.mul(parts["key"], w.key), ad.mul(parts["consist"], w.consist))
    return total, parts


def param_gradients(spec: NetSpec, params: NetParams, X, target_keys, target_scores,
                    w: LossWeights):
    """Exact d(total)/d(theta) for every tensor, via the taped graph.

    Returns (grads dict, total float, parts dict of floats).
    """
    leaves = {name: ad.Tensor(arr) for name, arr in params.tensors.items()}
    total, parts = losses(spec, leaves, X, target_keys, target_scores, w)
    ad.backward(total)
    grads = {}
    for name, leaf in leaves.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name}")
        grads[name] = g
    total_val = float(total.value)
    if not math.isfinite(total_val):
        raise NumericError("non-finite loss")
    return grads, total_val, {k: float(ad.value_of(v)) for k, v in parts.items()}


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear ramp to the scaled peak, then cosine decay to zero."""
    if not 0 <= step <= cfg.total_steps:
        raise DataError(f"step {step} outside [0, {cfg.total_steps}]")
    peak = cfg.peak_lr * math.sqrt(cfg.batch_size / cfg.b_ref)
    warm = max(1, round(cfg.warmup_frac * cfg.total_steps))
    if step <= warm:
        return peak * step / warm
    span = cfg.total_steps - warm
    if span <= 0:
        return peak
    return peak * 0.5 * (1.0 + math.cos(math.pi * (step - warm) / span))


def ema_decay_at(batch_size: int, cfg: TrainConfig) -> float:
    """Reference decay holds at B_ref; larger batches decay faster."""
    return cfg.ema_decay_ref ** (batch_size / cfg.b_ref)


def adam_step(state: OptimizerState, params: dict, grads: dict, lr: float,
              cfg: TrainConfig) -> None:
    """One bias-corrected Adam update, in place, plus the EMA shadow."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    decay = ema_decay_at(cfg.batch_size, cfg)
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
        shadow = state.ema[name]
        shadow += (1.0 - decay) * (params[name] - shadow)


def _epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    gen = np.random.Generator(np.random.Philox(key=np.array([seed, epoch], dtype=np.uint64)))
    return gen.permutation(n)


@dataclass
class TrainResult:
    params: NetParams
    ema_params: NetParams
    history: list = field(default_factory=list)


def train_model(spec: NetSpec, init: NetParams, data: TrainData, cfg: TrainConfig,
                w: LossWeights = LossWeights()) -> TrainResult:
    """Run the full loop; history logs every cfg.log_every steps plus the last.

    Validation metrics use the EMA parameters. Batches that would straddle an
    epoch boundary are dropped and a fresh shuffled epoch begins.
    """
    if data.targets.clusters != spec.c:
        raise DataError(f"targets have c={data.targets.clusters}, spec has c={spec.c}")
    if cfg.batch_size < 1 or cfg.batch_size > data.queries.rows:
        raise DataError(f"batch_size {cfg.batch_size} out of range")
    X_all = data.queries.f64()
    key_data = data.keys.f64()
    tk_all = key_data[data.targets.key_index]  # (N, c, d)
    ts_all = data.targets.support_value
    params = {k: v.copy() for k, v in init.tensors.items()}
    state = OptimizerState.fresh(params)
    history = []
    epoch, pos = 0, 0
    order = _epoch_order(cfg.seed, 0, data.queries.rows)
    for step in range(1, cfg.total_steps + 1):
        if pos + cfg.batch_size > order.size:
            epoch += 1
            pos = 0
            order = _epoch_order(cfg.seed, epoch, data.queries.rows)
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        grads, total, parts = param_gradients(spec, NetParams(params), X_all[idx],
                                              tk_all[idx], ts_all[idx], w)
        lr = lr_at(step, cfg)
        adam_step(state, params, grads, lr, cfg)
        if step % cfg.log_every == 0 or step == cfg.total_steps:
            row = {"step": step, "lr": lr, "loss_total": total,
                   "loss_score": parts.get("score"), "loss_grad": parts.get("grad"),
                   "loss_key": parts.get("key"), "loss_consist": parts.get("consist"),
                   "loss_nonneg": parts.get("nonneg"),
                   "val_erel": None, "val_match_rate": None}
            if data.val_queries is not None:
                ema = NetParams(state.ema)
                row["val_erel"], row["val_match_rate"] = _validate(spec, ema, data)
            history.append(row)
    return TrainResult(params=NetParams(params), ema_params=NetParams(state.ema).copy(),
                       history=history)


def _validate(spec: NetSpec, params: NetParams, data: TrainData):
    """(E_rel, match rate) of predicted keys on the validation split."""
    preds = predict_keys(spec, params, data.val_queries.f64())  # (N, c, d)
    targets = data.keys.f64()[data.val_targets.key_index]
    e_rel = mt.relative_transport_error(preds, data.val_queries.f64(), targets)
    match = None
    if spec.c == 1:
        match = mt.match_rate(preds[:, 0, :], data.keys, data.val_targets.key_index[:, 0])
    elif data.partition is not None:
        members = data.partition.member_lists()
        rates = [mt.match_rate(preds[:, j, :], data.keys,
                               data.val_targets.key_index[:, j], members=members[j])
                 for j in range(spec.c)]
        match = float(np.mean(rates))
    return e_rel, match


def write_history(history, path: str) -> None:
    """CSV dump of train_model history; missing parts stay empty."""
    cols = HISTORY_HEADER.split(",")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for row in history:
            writer.writerow(["" if row.get(c) is None else _fmt(row.get(c)) for c in cols])


def _fmt(x):
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)
