"""
What a support function is, in two dimensions
=============================================

The support function of a key set Y maps a query direction x to
max_y <x, y>, the best inner product any key can offer. Its argmax is the
answer to maximum inner product search, and the gradient of the support
function at x IS that optimal key: both facts drive the rest of the library.

Run this to watch the winning key rotate as the query direction sweeps a
half circle, and to see that the support function is a maximum of linear
functions (so it is convex and positively homogeneous by construction).
"""

import numpy as np

from amips.exact import support_and_argmax, top_k
from amips.store import EmbeddingStore


def main():
    # Five hand-placed keys: four roughly axis-aligned, one long outlier.
    keys = EmbeddingStore(np.array([
        [1.00, 0.05],
        [0.70, 0.70],
        [0.05, 1.00],
        [-0.60, 0.80],
        [1.10, 0.90],  # longer than the rest, wins a wide arc
    ]), kind="key")

    print("key set:")
    for i, row in enumerate(keys.f64()):
        print(f"  k{i} = ({row[0]:+.2f}, {row[1]:+.2f})  norm {np.linalg.norm(row):.2f}")

    print("\nsweep of query directions, angle -> support value and winner:")
    for deg in range(0, 181, 15):
        t = np.radians(deg)
        x = np.array([np.cos(t), np.sin(t)])
        value, index = support_and_argmax(keys, x)
        print(f"  {deg:3d} deg  sigma(x) = {value:+.3f}  argmax = k{index}")

    # The support function is a max of the five linear maps <x, y_i>; along
    # the sweep it is piecewise sinusoidal with kinks where the winner flips.
    x = np.array([0.9, 0.3])
    values, indices = top_k(keys, x, 3)
    print(f"\ntop-3 for x = ({x[0]}, {x[1]}):")
    for rank, (v, i) in enumerate(zip(values, indices), 1):
        print(f"  #{rank}: k{i} with <x, k{i}> = {v:+.3f}")

    # Homogeneity: scaling the query scales the support value, nothing else.
    v1, i1 = support_and_argmax(keys, x)
    v3, i3 = support_and_argmax(keys, 3.0 * x)
    print(f"\nsigma(3x) = {v3:.4f} = 3 * sigma(x) = {3 * v1:.4f}, "
          f"same argmax k{i1} == k{i3}")


if __name__ == "__main__":
    main()
