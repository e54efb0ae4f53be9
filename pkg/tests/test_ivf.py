"""Inverted-file search, probe sweeps, and query-drift behavior."""

import numpy as np
import pytest

from amips.cluster import Partition
from amips.errors import DataError
from amips.exact import build_targets, top_k
from amips.ivf import (IvfIndex, Strategy, build_ivf, default_cells,
                       nprobe_sweep, ood_sweep, oracle_check, perturb_queries,
                       route_queries, search_ivf, write_sweep_rows)
from amips.metrics import flops_model_forward, flops_model_gradient
from amips.nets import NetSpec, init_params, predict_keys
from amips.store import EmbeddingStore
from amips.synth import small_fixture


@pytest.fixture(scope="module")
def setup():
    keys, train, val = small_fixture(seed=7)
    index = build_ivf(keys, cells=8, seed=0)
    targets = build_targets(val, keys)
    return keys, val, index, targets


def hand_index():
    """Two cells in 2-D; key 3 is a long outlier far from its cell centroid."""
    keys = EmbeddingStore(np.array([[1.0, 0.0], [0.9, 0.1],
                                    [0.0, 1.0], [0.8, 0.9]]), kind="key")
    part = Partition(cluster_of=np.array([0, 0, 1, 1], dtype=np.int32),
                     centroids=np.array([[0.95, 0.05], [0.4, 0.95]]))
    return build_ivf(keys, partition=part)


def test_default_cells():
    assert default_cells(2048) == 45
    assert default_cells(256) == 16
    assert default_cells(1) == 1


def test_full_probe_matches_exact_topk(setup):
    keys, val, index, _ = setup
    for x in val.f64()[:40]:
        idx, vals, _ = search_ivf(index, x, index.cells, 10)
        want_vals, want_idx = top_k(keys, x, 10)
        np.testing.assert_array_equal(idx, want_idx)
        np.testing.assert_allclose(vals, want_vals, rtol=1e-12)
    assert oracle_check(index, val, 10)


def test_candidates_come_from_probed_cells(setup):
    keys, val, index, _ = setup
    x = val.f64()[0]
    scores = index.partition.centroids @ x
    best_cell = int(np.argsort(-scores, kind="stable")[0])
    idx, vals, _ = search_ivf(index, x, 1, 50)
    assert set(idx) <= set(index.lists[best_cell].tolist())
    np.testing.assert_allclose(vals, keys.f64()[idx] @ x, rtol=1e-12)
    assert np.all(np.diff(vals) <= 1e-15)


def test_flops_accounting(setup):
    keys, val, index, _ = setup
    x = val.f64()[0]
    scores = index.partition.centroids @ x
    order = np.argsort(-scores, kind="stable")[:3]
    opened = sum(index.lists[j].size for j in order)
    _, _, flops = search_ivf(index, x, 3, 5)
    assert flops == 2 * keys.dim * index.cells + 2 * keys.dim * opened


def test_short_cells_return_fewer_than_k():
    index = hand_index()
    idx, vals, _ = search_ivf(index, np.array([1.0, 0.0]), 1, 10)
    assert idx.size == 2 and vals.size == 2


def test_hand_worked_search_and_miss():
    index = hand_index()
    # Query routes to cell 0 but its global best key (index 3) lives in cell 1:
    # cell scores 0.9675 vs 0.7325, key scores (1.0, 0.935, 0.35, 1.115).
    x = np.array([1.0, 0.35])
    assert float(index.partition.centroids[0] @ x) > float(
        index.partition.centroids[1] @ x)
    idx, _, _ = search_ivf(index, x, 1, 2)
    assert 3 not in idx  # missed at n_probe=1
    idx2, _, _ = search_ivf(index, x, 2, 2)
    assert idx2[0] == 3  # found and ranked first once its cell is probed


def test_route_query_only_affects_cell_choice():
    index = hand_index()
    x = np.array([1.0, 0.35])
    routed, _, _ = search_ivf(index, x, 1, 2, route_query=np.array([0.0, 1.0]))
    assert routed[0] == 3  # mapped routing opens the right cell
    a, av, _ = search_ivf(index, x, 2, 4)
    b, bv, _ = search_ivf(index, x, 2, 4, route_query=np.array([9.0, -3.0]))
    np.testing.assert_array_equal(a, b)  # full probe: routing is irrelevant
    np.testing.assert_allclose(av, bv, rtol=1e-15)


def test_search_validation(setup):
    keys, val, index, _ = setup
    with pytest.raises(DataError):
        search_ivf(index, val.f64()[0], 0, 5)
    with pytest.raises(DataError):
        search_ivf(index, val.f64()[0], index.cells + 1, 5)
    with pytest.raises(DataError):
        search_ivf(index, np.zeros(3), 1, 5)
    with pytest.raises(DataError):
        build_ivf(keys, partition=Partition(
            cluster_of=np.zeros(3, dtype=np.int32), centroids=np.zeros((1, 16))))


def test_route_queries_costs(setup):
    keys, val, index, _ = setup
    X, extra = route_queries(Strategy(name="natural"), val)
    np.testing.assert_array_equal(X, val.f64())
    assert extra == 0

    kspec = NetSpec(family="keynet", L=2, h=8, d=keys.dim, c=1, n_x=1)
    kparams = init_params(kspec, seed=0)
    preds, extra = route_queries(
        Strategy(name="mapped", label="S", spec=kspec, params=kparams), val)
    np.testing.assert_allclose(
        preds, predict_keys(kspec, kparams, val.f64())[:, 0, :], rtol=1e-12)
    assert extra == flops_model_forward(kspec)

    sspec = NetSpec(family="supportnet", L=2, h=8, d=keys.dim, c=1, n_x=1,
                    homogenize=True)
    _, extra = route_queries(
        Strategy(name="mapped", spec=sspec, params=init_params(sspec, seed=1)),
        val)
    assert extra == flops_model_forward(sspec) + flops_model_gradient(sspec)


def test_strategy_validation():
    with pytest.raises(DataError):
        Strategy(name="hybrid")
    with pytest.raises(DataError):
        Strategy(name="mapped")


def test_sweep_monotone_and_mrr_equals_recall(setup):
    keys, val, index, targets = setup
    rows = nprobe_sweep(index, [Strategy(name="natural")], val, targets,
                        n_probes=(1, 2, 4, 8), k=10)
    recalls = [r["recall"] for r in rows]
    assert all(b >= a for a, b in zip(recalls, recalls[1:]))
    assert recalls[-1] == 1.0
    # Candidates are rescored exactly, so the true best key ranks first
    # whenever it is retrieved at all.
    for r in rows:
        assert r["mrr"] == pytest.approx(r["recall"])
        assert r["mean_flops"] > 0
    flops = [r["mean_flops"] for r in rows]
    assert all(b > a for a, b in zip(flops, flops[1:]))


def test_sweep_mapped_adds_model_cost(setup):
    keys, val, index, targets = setup
    kspec = NetSpec(family="keynet", L=2, h=8, d=keys.dim, c=1, n_x=1)
    strategies = [Strategy(name="natural"),
                  Strategy(name="mapped", label="S", spec=kspec,
                           params=init_params(kspec, seed=0))]
    rows = nprobe_sweep(index, strategies, val, targets, n_probes=(8,), k=10)
    nat = next(r for r in rows if r["strategy"] == "natural")
    mapped = next(r for r in rows if r["strategy"] == "mapped")
    # Full probe opens every cell for either routing query, so the cost gap
    # is exactly the model forward.
    assert mapped["mean_flops"] - nat["mean_flops"] == pytest.approx(
        flops_model_forward(kspec))
    assert mapped["recall"] == nat["recall"] == 1.0


def test_perturb_queries(setup):
    keys, val, index, _ = setup
    assert perturb_queries(val, 0.0, seed=5) is val
    moved = perturb_queries(val, 0.1, seed=5)
    np.testing.assert_allclose(np.linalg.norm(moved.f64(), axis=1), 1.0,
                               atol=1e-6)
    again = perturb_queries(val, 0.1, seed=5)
    np.testing.assert_array_equal(moved.data, again.data)
    assert not np.array_equal(moved.data, val.data)
    with pytest.raises(DataError):
        perturb_queries(val, -0.1, seed=5)


def test_ood_sweep_zero_noise_matches_plain(setup):
    keys, val, index, targets = setup
    strategies = [Strategy(name="natural")]
    rows, gaps = ood_sweep(index, strategies, val, noise_stds=(0.0,),
                           n_probes=(1, 4), k=10, seed=0)
    plain = nprobe_sweep(index, strategies, val, targets, (1, 4), 10)
    for got, want in zip(rows, plain):
        assert got["recall"] == want["recall"]
        assert got["mrr"] == want["mrr"]
        assert got["noise_std"] == 0.0
    assert gaps == []  # no mapped strategy in the sweep


def test_ood_sweep_gaps(setup):
    keys, val, index, _ = setup
    kspec = NetSpec(family="keynet", L=2, h=8, d=keys.dim, c=1, n_x=1)
    strategies = [Strategy(name="natural"),
                  Strategy(name="mapped", label="S", spec=kspec,
                           params=init_params(kspec, seed=0))]
    rows, gaps = ood_sweep(index, strategies, val, noise_stds=(0.0, 0.2),
                           n_probes=(1, 8), k=10, seed=0)
    assert len(rows) == 8 and len(gaps) == 4
    for g in gaps:
        assert np.isfinite(g["mrr_gap"])
        nat = next(r["mrr"] for r in rows
                   if r["strategy"] == "natural"
                   and r["noise_std"] == g["noise_std"]
                   and r["n_probe"] == g["n_probe"])
        mapped = next(r["mrr"] for r in rows
                      if r["strategy"] == "mapped"
                      and r["noise_std"] == g["noise_std"]
                      and r["n_probe"] == g["n_probe"])
        assert g["mrr_gap"] == pytest.approx(nat - mapped)


def test_sweep_csv(setup, tmp_path):
    keys, val, index, targets = setup
    rows = nprobe_sweep(index, [Strategy(name="natural")], val, targets,
                        n_probes=(1,), k=5)
    path = tmp_path / "sweep.csv"
    write_sweep_rows(rows, str(path))
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "strategy,model_size,noise_std,n_probe,k,recall,mrr,mean_flops"
    assert lines[1].startswith("natural,,0.0,1,5,")
