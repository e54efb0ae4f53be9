"""Pipeline command line: data prep, clustering, training, and benchmarks.

Subcommands wire the library end to end: synth -> ingest/augment -> cluster ->
targets -> train -> eval / route-bench / ivf-bench / ood-bench / timing. Every
option can come from a flat ``key = value`` config file (``--config``), with
command-line flags taking precedence; lists are comma-separated. Each command
writes its declared output file(s) plus a JSON manifest (resolved config, seed,
library versions, no timestamps), so reruns with identical inputs produce
byte-identical artifacts.

One command at a time per output directory: a ``.amips.lock`` file guards it
and a held lock aborts the run. Failures remove partial outputs.

Exit codes: 0 ok; 1 usage (unknown command/flag, missing required option);
2 data or format problem (bad file, bad config value, contradiction, IO);
3 numeric failure during training or evaluation.
"""

import argparse
import json
import os
import statistics
import sys
import time

import numpy as np

from . import __version__
from .cluster import load_partition, save_partition, select_balanced
from .errors import AmipsError, DataError, FormatError, NumericError
from .exact import build_targets, load_targets, save_targets
from .ivf import Strategy, build_ivf, nprobe_sweep, ood_sweep, write_sweep_rows
from .metrics import MetricReport, metric_report
from .nets import (BudgetSpec, NetSpec, RHO_TAGS, forward, init_params, load_params,
                   n_x_for_policy, predict_keys, save_params, solve_width)
from .router import RoutePlan, routing_curve, write_routing_curve
from .store import (AugmentConfig, EmbeddingStore, _atomic_write, augment_queries,
                    dedup_rows, load_store, normalize_rows, save_store)
from .synth import SynthConfig, make_fixture
from .train import LossWeights, TrainConfig, TrainData, train_model, write_history

LOCK_NAME = ".amips.lock"
TIMING_HEADER = "family,op,batch_size,runs,mean_ms,median_ms"


class UsageError(Exception):
    """Bad invocation: unknown flag/command or missing required option."""


# --- option schemas ---------------------------------------------------------
# key -> (kind, default); REQUIRED defaults mark options that must be set via
# flag or config file. Kinds: int, float, bool, str, ints, floats, strs
# (strs flags are repeatable; in config files all lists are comma-separated).

REQUIRED = object()

_TRAIN_KEYS = {
    "queries": ("str", REQUIRED), "keys": ("str", REQUIRED),
    "targets": ("str", REQUIRED), "out": ("str", REQUIRED),
    "val_queries": ("str", ""), "val_targets": ("str", ""),
    "partition": ("str", ""),
    "family": ("str", "keynet"), "size": ("str", "M"), "h": ("int", 0),
    "depth": ("int", 4), "inject": ("str", "every-layer"), "c": ("int", 0),
    "homogenize": ("str", "auto"), "residual": ("bool", False),
    "alpha": ("float", 0.1), "beta": ("float", 20.0),
    "batch_size": ("int", 128), "total_steps": ("int", 1000),
    "peak_lr": ("float", 1e-4), "warmup_frac": ("float", 0.025),
    "log_every": ("int", 50), "seed": ("int", 0),
    "w_score": ("float", 0.01), "w_grad": ("float", 1.0),
    "w_key": ("float", 1.0), "w_consist": ("float", 0.01),
    "w_nonneg": ("float", 1.0),
}

SCHEMAS = {
    "synth": {
        "out": ("str", REQUIRED), "n_keys": ("int", 2048),
        "n_train": ("int", 4096), "n_val": ("int", 512), "dim": ("int", 16),
        "modes": ("int", 10), "key_spread": ("float", 0.35),
        "query_spread": ("float", 0.04), "mode_shift": ("float", 0.25),
        "spread_ramp": ("float", 4.0), "seed": ("int", 0),
    },
    "ingest": {
        "input": ("str", REQUIRED), "out": ("str", REQUIRED),
        "kind": ("str", "key"), "normalize": ("bool", True),
        "dedup": ("bool", True), "seed": ("int", 0),
    },
    "augment": {
        "queries": ("str", REQUIRED), "out": ("str", REQUIRED),
        "noise_std": ("float", 0.02), "factor": ("int", 10), "seed": ("int", 0),
    },
    "cluster": {
        "keys": ("str", REQUIRED), "out": ("str", REQUIRED),
        "c": ("int", REQUIRED), "restarts": ("int", 10),
        "max_iters": ("int", 100), "seed": ("int", 0),
    },
    "targets": {
        "queries": ("str", REQUIRED), "keys": ("str", REQUIRED),
        "out": ("str", REQUIRED), "partition": ("str", ""), "seed": ("int", 0),
    },
    "train": _TRAIN_KEYS,
    "eval": {
        "queries": ("str", REQUIRED), "keys": ("str", REQUIRED),
        "targets": ("str", REQUIRED), "params": ("str", REQUIRED),
        "out": ("str", REQUIRED), "seed": ("int", 0),
    },
    "route-bench": {
        "keys": ("str", REQUIRED), "queries": ("str", REQUIRED),
        "targets": ("str", REQUIRED), "partition": ("str", REQUIRED),
        "out": ("str", REQUIRED), "model": ("strs", ()),
        "k_max": ("int", 0), "seed": ("int", 0),
    },
    "ivf-bench": {
        "keys": ("str", REQUIRED), "queries": ("str", REQUIRED),
        "targets": ("str", REQUIRED), "out": ("str", REQUIRED),
        "mapped": ("strs", ()), "partition": ("str", ""), "cells": ("int", 0),
        "n_probes": ("ints", (1, 2, 4, 8, 16)), "k": ("int", 10),
        "seed": ("int", 0),
    },
    "ood-bench": {
        "keys": ("str", REQUIRED), "queries": ("str", REQUIRED),
        "out": ("str", REQUIRED), "mapped": ("strs", ()),
        "partition": ("str", ""), "cells": ("int", 0),
        "n_probes": ("ints", (1, 2, 4, 8, 16)), "k": ("int", 10),
        "noise_stds": ("floats", (0.0, 0.1, 0.2)), "gaps_out": ("str", ""),
        "seed": ("int", 0),
    },
    "timing": {
        "queries": ("str", REQUIRED), "out": ("str", REQUIRED),
        "supportnet": ("str", ""), "keynet": ("str", ""),
        "batch": ("int", 4096), "runs": ("int", 100), "warmup": ("int", 5),
        "seed": ("int", 0),
    },
}

_BOOL_WORDS = {"true": True, "1": True, "yes": True, "on": True,
               "false": False, "0": False, "no": False, "off": False}


def _coerce(kind: str, text):
    try:
        if kind == "int":
            return int(text, 10)
        if kind == "float":
            return float(text)
        if kind == "bool":
            return _BOOL_WORDS[text.strip().lower()]
        if kind == "ints":
            return tuple(int(t, 10) for t in text.split(",") if t.strip())
        if kind == "floats":
            return tuple(float(t) for t in text.split(",") if t.strip())
        if kind == "strs":
            return tuple(t.strip() for t in text.split(",") if t.strip())
        return text
    except (ValueError, KeyError):
        raise FormatError(f"cannot parse {text!r} as {kind}")


def load_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; # comments and blank lines ignored."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}:{lineno}: expected key = value")
            key, text = line.split("=", 1)
            values[key.strip()] = text.strip()
    return values


def resolve_config(command: str, flag_values: dict, config_path: str) -> dict:
    """Defaults, then config file, then flags; checks required keys."""
    schema = SCHEMAS[command]
    cfg = {k: d for k, (_, d) in schema.items()}
    if config_path:
        for key, text in load_config_file(config_path).items():
            if key not in schema:
                raise FormatError(f"unknown config key {key!r} for {command}")
            cfg[key] = _coerce(schema[key][0], text)
    for key, value in flag_values.items():
        if value is None:
            continue
        kind = schema[key][0]
        if kind == "strs":
            cfg[key] = tuple(s for text in value for s in _coerce(kind, text))
        else:
            cfg[key] = _coerce(kind, value)
    missing = [k for k, v in cfg.items() if v is REQUIRED]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in sorted(missing))
        raise UsageError(f"{command}: missing required option(s): {flags}")
    return cfg


# --- manifests, locking, cleanup -------------------------------------------


def _versions() -> dict:
    return {"amips": __version__, "numpy": np.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3])}


def write_manifest(path: str, command: str, cfg: dict) -> None:
    payload = {"command": command, "config": cfg, "seed": cfg.get("seed", 0),
               "versions": _versions()}
    blob = json.dumps(payload, sort_keys=True, indent=2).encode() + b"\n"
    _atomic_write(path, blob)


def manifest_path(out: str, is_dir: bool) -> str:
    return os.path.join(out, "manifest.json") if is_dir else out + ".manifest.json"


class _DirLock:
    """One command at a time per output directory."""

    def __init__(self, directory: str):
        self.path = os.path.join(directory or ".", LOCK_NAME)

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise DataError(f"{self.path}: output directory is locked by another "
                            "run (remove the lock file if it is stale)")
        with os.fdopen(fd, "w") as fh:
            fh.write(str(os.getpid()))
        return self

    def __exit__(self, *exc):
        try:
            os.unlink(self.path)
        except OSError:
            pass
        return False


def _load_queries(path: str) -> EmbeddingStore:
    return load_store(path, kind="query")


def _load_keys(path: str) -> EmbeddingStore:
    return load_store(path, kind="key")


def _load_model(path: str):
    return load_params(path)


def _labeled_models(entries):
    """Parse repeatable LABEL=PATH model references (bare PATH: label = stem)."""
    models = []
    for entry in entries:
        if "=" in entry:
            label, path = entry.split("=", 1)
        else:
            path = entry
            label = os.path.splitext(os.path.basename(path))[0]
        spec, params = _load_model(path)
        models.append((label, spec, params))
    return models


# --- command bodies ---------------------------------------------------------
# Each takes the resolved config and a list collecting written paths (used to
# remove partial outputs if a later step fails). Manifests are written last,
# so a manifest on disk certifies a complete run.


def _cmd_synth(cfg, outs):
    fix = SynthConfig(n_keys=cfg["n_keys"], n_train=cfg["n_train"],
                      n_val=cfg["n_val"], dim=cfg["dim"], modes=cfg["modes"],
                      key_spread=cfg["key_spread"],
                      query_spread=cfg["query_spread"],
                      mode_shift=cfg["mode_shift"],
                      spread_ramp=cfg["spread_ramp"], seed=cfg["seed"])
    keys, train, val = make_fixture(fix)
    os.makedirs(cfg["out"], exist_ok=True)
    for name, store in (("keys.amip", keys), ("train_queries.amip", train),
                        ("val_queries.amip", val)):
        path = os.path.join(cfg["out"], name)
        save_store(store, path)
        outs.append(path)
    write_manifest(manifest_path(cfg["out"], True), "synth", cfg)


def _cmd_ingest(cfg, outs):
    store = load_store(cfg["input"], kind=cfg["kind"])
    if cfg["normalize"]:
        store = normalize_rows(store)
    if cfg["dedup"]:
        store = dedup_rows(store)
    save_store(store, cfg["out"])
    outs.append(cfg["out"])
    write_manifest(manifest_path(cfg["out"], False), "ingest", cfg)


def _cmd_augment(cfg, outs):
    store = _load_queries(cfg["queries"])
    grown = augment_queries(store, AugmentConfig(noise_std=cfg["noise_std"],
                                                 factor=cfg["factor"],
                                                 seed=cfg["seed"]))
    save_store(grown, cfg["out"])
    outs.append(cfg["out"])
    write_manifest(manifest_path(cfg["out"], False), "augment", cfg)


def _cmd_cluster(cfg, outs):
    keys = _load_keys(cfg["keys"])
    part = select_balanced(keys, cfg["c"], seed=cfg["seed"],
                           restarts=cfg["restarts"], max_iters=cfg["max_iters"])
    save_partition(part, cfg["out"])
    outs.append(cfg["out"])
    write_manifest(manifest_path(cfg["out"], False), "cluster", cfg)


def _cmd_targets(cfg, outs):
    queries = _load_queries(cfg["queries"])
    keys = _load_keys(cfg["keys"])
    part = load_partition(cfg["partition"]) if cfg["partition"] else None
    targets = build_targets(queries, keys, part)
    save_targets(targets, cfg["out"])
    outs.append(cfg["out"])
    write_manifest(manifest_path(cfg["out"], False), "targets", cfg)


def _make_spec(cfg, keys, c: int) -> NetSpec:
    n_x = n_x_for_policy(cfg["depth"], cfg["inject"])
    h = cfg["h"]
    if h <= 0:
        if cfg["size"] not in RHO_TAGS:
            raise DataError(f"unknown size tag {cfg['size']!r}; "
                            f"expected one of {sorted(RHO_TAGS)}")
        budget = BudgetSpec(rho=RHO_TAGS[cfg["size"]], n=keys.rows, d=keys.dim,
                            L=cfg["depth"], n_x=n_x)
        h = solve_width(budget)
    if cfg["homogenize"] == "auto":
        homogenize = cfg["family"] == "supportnet"
    else:
        homogenize = _coerce("bool", cfg["homogenize"])
    return NetSpec(family=cfg["family"], L=cfg["depth"], h=h, d=keys.dim, c=c,
                   n_x=n_x, residual=cfg["residual"], homogenize=homogenize,
                   alpha=cfg["alpha"], beta=cfg["beta"])


def _cmd_train(cfg, outs):
    queries = _load_queries(cfg["queries"])
    keys = _load_keys(cfg["keys"])
    targets = load_targets(cfg["targets"], queries, keys)
    c = targets.clusters
    if cfg["c"] and cfg["c"] != c:
        raise DataError(f"config c={cfg['c']} but target file has c={c}")
    part = load_partition(cfg["partition"]) if cfg["partition"] else None
    val_q = val_t = None
    if cfg["val_queries"]:
        if not cfg["val_targets"]:
            raise DataError("val_queries given without val_targets")
        val_q = _load_queries(cfg["val_queries"])
        val_t = load_targets(cfg["val_targets"], val_q, keys)
    spec = _make_spec(cfg, keys, c)
    data = TrainData(queries=queries, targets=targets, keys=keys,
                     val_queries=val_q, val_targets=val_t, partition=part)
    tc = TrainConfig(batch_size=cfg["batch_size"], total_steps=cfg["total_steps"],
                     peak_lr=cfg["peak_lr"], warmup_frac=cfg["warmup_frac"],
                     seed=cfg["seed"], log_every=cfg["log_every"])
    weights = LossWeights(score=cfg["w_score"], grad=cfg["w_grad"],
                          key=cfg["w_key"], consist=cfg["w_consist"],
                          nonneg=cfg["w_nonneg"])
    result = train_model(spec, init_params(spec, cfg["seed"]), data, tc, w=weights)
    os.makedirs(cfg["out"], exist_ok=True)
    for name, params in (("params.amnp", result.params),
                         ("ema.amnp", result.ema_params)):
        path = os.path.join(cfg["out"], name)
        save_params(spec, params, path)
        outs.append(path)
    history = os.path.join(cfg["out"], "history.csv")
    write_history(result.history, history)
    outs.append(history)
    write_manifest(manifest_path(cfg["out"], True), "train", cfg)


def _cmd_eval(cfg, outs):
    queries = _load_queries(cfg["queries"])
    keys = _load_keys(cfg["keys"])
    targets = load_targets(cfg["targets"], queries, keys)
    if targets.clusters != 1:
        raise DataError("eval reports global metrics and needs c=1 targets")
    spec, params = _load_model(cfg["params"])
    if spec.c != 1:
        raise DataError(f"eval needs a c=1 model, got c={spec.c}")
    preds = predict_keys(spec, params, queries.f64())[:, 0, :]
    report = metric_report(preds, queries.f64(), keys, targets.key_index[:, 0])
    blob = (MetricReport.CSV_HEADER + "\n" + report.csv_row() + "\n").encode()
    _atomic_write(cfg["out"], blob)
    outs.append(cfg["out"])
    write_manifest(manifest_path(cfg["out"], False), "eval", cfg)


def _cmd_route_bench(cfg, outs):
    keys = _load_keys(cfg["keys"])
    queries = _load_queries(cfg["queries"])
    targets = load_targets(cfg["targets"], queries, keys)
    part = load_partition(cfg["partition"])
    k_max = cfg["k_max"] or part.c
    plans = [RoutePlan(scorer="centroid", k_clusters=k_max, label="centroid")]
    for label, spec, params in _labeled_models(cfg["model"]):
        if spec.c != part.c:
            raise DataError(f"model {label!r} scores {spec.c} clusters, "
                            f"partition has {part.c}")
        plans.append(RoutePlan(scorer="learned", k_clusters=k_max, label=label,
                               spec=spec, params=params))
    curve = routing_curve(plans, part, keys, queries, targets)
    write_routing_curve(curve, cfg["out"])
    outs.append(cfg["out"])
    write_manifest(manifest_path(cfg["out"], False), "route-bench", cfg)


def _ivf_pieces(cfg, keys):
    part = load_partition(cfg["partition"]) if cfg["partition"] else None
    cells = cfg["cells"] or None
    index = build_ivf(keys, cells=cells, seed=cfg["seed"], partition=part)
    strategies = [Strategy(name="natural")]
    for label, spec, params in _labeled_models(cfg["mapped"]):
        strategies.append(Strategy(name="mapped", label=label, spec=spec,
                                   params=params))
    return index, strategies


def _cmd_ivf_bench(cfg, outs):
    keys = _load_keys(cfg["keys"])
    queries = _load_queries(cfg["queries"])
    targets = load_targets(cfg["targets"], queries, keys)
    index, strategies = _ivf_pieces(cfg, keys)
    rows = nprobe_sweep(index, strategies, queries, targets,
                        cfg["n_probes"], cfg["k"])
    write_sweep_rows(rows, cfg["out"])
    outs.append(cfg["out"])
    write_manifest(manifest_path(cfg["out"], False), "ivf-bench", cfg)


def _cmd_ood_bench(cfg, outs):
    keys = _load_keys(cfg["keys"])
    queries = _load_queries(cfg["queries"])
    index, strategies = _ivf_pieces(cfg, keys)
    rows, gaps = ood_sweep(index, strategies, queries, cfg["noise_stds"],
                           cfg["n_probes"], cfg["k"], seed=cfg["seed"])
    write_sweep_rows(rows, cfg["out"])
    outs.append(cfg["out"])
    if cfg["gaps_out"]:
        lines = ["noise_std,model_size,n_probe,mrr_gap"]
        lines += [f"{g['noise_std']},{g['model_size']},{g['n_probe']},"
                  f"{g['mrr_gap']:.6f}" for g in gaps]
        _atomic_write(cfg["gaps_out"], ("\n".join(lines) + "\n").encode())
        outs.append(cfg["gaps_out"])
    write_manifest(manifest_path(cfg["out"], False), "ood-bench", cfg)


def _timed_ms(fn, runs: int, warmup: int):
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1000.0)
    return statistics.mean(samples), statistics.median(samples)


def _cmd_timing(cfg, outs):
    if not cfg["supportnet"] and not cfg["keynet"]:
        raise DataError("timing needs --supportnet and/or --keynet params")
    queries = _load_queries(cfg["queries"])
    reps = int(np.ceil(cfg["batch"] / queries.rows))
    X = np.tile(queries.f64(), (reps, 1))[: cfg["batch"]]
    lines = [TIMING_HEADER]
    for key in ("supportnet", "keynet"):
        if not cfg[key]:
            continue
        spec, params = _load_model(cfg[key])
        if spec.family != key:
            raise DataError(f"--{key} file holds a {spec.family} model")
        for op, fn in (("score", lambda: forward(spec, params, X)),
                       ("key", lambda: predict_keys(spec, params, X))):
            mean, median = _timed_ms(fn, cfg["runs"], cfg["warmup"])
            lines.append(f"{spec.family},{op},{cfg['batch']},{cfg['runs']},"
                         f"{mean:.6f},{median:.6f}")
    _atomic_write(cfg["out"], ("\n".join(lines) + "\n").encode())
    outs.append(cfg["out"])
    write_manifest(manifest_path(cfg["out"], False), "timing", cfg)


_COMMANDS = {
    "synth": _cmd_synth, "ingest": _cmd_ingest, "augment": _cmd_augment,
    "cluster": _cmd_cluster, "targets": _cmd_targets, "train": _cmd_train,
    "eval": _cmd_eval, "route-bench": _cmd_route_bench,
    "ivf-bench": _cmd_ivf_bench, "ood-bench": _cmd_ood_bench,
    "timing": _cmd_timing,
}

_DIR_OUTPUT = {"synth", "train"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="amips", description=__doc__.split("\n", 1)[0])
    subs = parser.add_subparsers(dest="command", metavar="command")
    for command, schema in SCHEMAS.items():
        sub = subs.add_parser(command, add_help=True)
        sub.add_argument("--config", default=None, metavar="FILE")
        for key, (kind, default) in schema.items():
            flag = "--" + key.replace("_", "-")
            if kind == "strs":
                sub.add_argument(flag, dest=key, action="append", default=None,
                                 metavar="VALUE")
            else:
                shown = "(required)" if default is REQUIRED else repr(default)
                sub.add_argument(flag, dest=key, default=None, metavar="VALUE",
                                 help=f"{kind}, default {shown}")
    return parser


def _out_directory(cfg: dict, command: str) -> str:
    out = cfg["out"]
    if command in _DIR_OUTPUT:
        os.makedirs(out, exist_ok=True)
        return out
    parent = os.path.dirname(out) or "."
    os.makedirs(parent, exist_ok=True)
    return parent


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError("no command given (see --help)")
        schema = SCHEMAS[ns.command]
        flag_values = {k: getattr(ns, k) for k in schema}
        cfg = resolve_config(ns.command, flag_values, ns.config)
        outs = []
        with _DirLock(_out_directory(cfg, ns.command)):
            try:
                _COMMANDS[ns.command](cfg, outs)
            except BaseException:
                for path in outs:
                    try:
                        os.unlink(path)
                    except OSError:
                        pass
                raise
    except UsageError as err:
        print(f"amips: {err}", file=sys.stderr)
        return 1
    except NumericError as err:
        print(f"amips: numeric failure: {err}", file=sys.stderr)
        return 3
    except (FormatError, DataError) as err:
        print(f"amips: {err}", file=sys.stderr)
        return 2
    except AmipsError as err:
        print(f"amips: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"amips: {err}", file=sys.stderr)
        return 2
    except SystemExit as err:  # argparse --help
        return int(err.code or 0)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
