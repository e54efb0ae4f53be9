"""
Rescuing inverted-file search with mapped queries
=================================================

An inverted-file (IVF) index probes the n_probe cells whose centroids best
match the query, then scores only those members. Cheap, but the query and
its optimal key need not live near the same centroid: queries sit where
users put them, keys where the data put them, and at n_probe=1 that gap
costs real recall.

The fix here: route with the PREDICTED KEY instead of the raw query. A
trained key predictor maps the query into key space, cells are ranked by
the mapped vector, and candidates are still scored exactly against the
original query, so nothing is approximated except which cells get opened.
This demo trains the predictor, sweeps n_probe both ways, then drifts the
queries off distribution to show the advantage eroding gracefully.
Takes ~15 seconds.
"""

import numpy as np

from amips.exact import build_targets
from amips.ivf import Strategy, build_ivf, nprobe_sweep, ood_sweep
from amips.nets import NetSpec, init_params
from amips.synth import SynthConfig, make_fixture
from amips.train import TrainConfig, TrainData, train_model


def main():
    keys, train, val = make_fixture(SynthConfig(n_keys=1024, n_train=2048,
                                                n_val=256))
    index = build_ivf(keys, seed=0)  # default cell count ~sqrt(n)
    print(f"IVF index: {keys.rows} keys in {index.cells} cells, d={keys.dim}")

    data = TrainData(queries=train, targets=build_targets(train, keys),
                     keys=keys, val_queries=val,
                     val_targets=build_targets(val, keys))
    spec = NetSpec(family="keynet", L=4, h=24, d=keys.dim, c=1, n_x=3)
    cfg = TrainConfig(batch_size=128, total_steps=2000, peak_lr=1e-2, seed=0,
                      log_every=2000)
    result = train_model(spec, init_params(spec, seed=0), data, cfg)
    last = result.history[-1]
    print(f"key predictor trained: val E_rel {last['val_erel']:.2f}, "
          f"match rate {last['val_match_rate']:.3f}")

    strategies = [
        Strategy(name="natural"),
        Strategy(name="mapped", label="M", spec=spec, params=result.ema_params),
    ]
    n_probes = (1, 2, 4, 8, index.cells)
    rows = nprobe_sweep(index, strategies, val, build_targets(val, keys),
                        n_probes, k=10)

    print(f"\nrecall@10 by probe depth ({val.rows} queries):")
    print(f"  {'n_probe':>7} {'natural':>8} {'mapped':>8} {'flops n/m':>14}")
    for n_probe in n_probes:
        nat = next(r for r in rows if r["strategy"] == "natural" and r["n_probe"] == n_probe)
        mapped = next(r for r in rows if r["strategy"] == "mapped" and r["n_probe"] == n_probe)
        print(f"  {n_probe:>7} {nat['recall']:>8.3f} {mapped['recall']:>8.3f} "
              f"{nat['mean_flops']:>6.0f}/{mapped['mean_flops']:>6.0f}")
    print("full probe is exact for both; the mapped column buys its recall "
          "with one forward pass per query.")

    # Drift: perturb and renormalize queries, recompute exact targets, and
    # track the natural-minus-mapped MRR gap as the predictor goes stale.
    stds = (0.0, 0.2, 0.4)
    _, gaps = ood_sweep(index, strategies, val, stds, (1, 2), k=10, seed=0)
    print("\nquery drift, natural-minus-mapped MRR gap (negative favors mapped):")
    for std in stds:
        cells = [f"n_probe={g['n_probe']}: {g['mrr_gap']:+.3f}"
                 for g in gaps if g["noise_std"] == std]
        print(f"  noise {std:.1f}  " + "  ".join(cells))
    print("the mapped advantage erodes as queries leave the training "
          "distribution, smoothly rather than collapsing; past some drift "
          "the raw query routes better than the stale predictor.")


if __name__ == "__main__":
    main()
