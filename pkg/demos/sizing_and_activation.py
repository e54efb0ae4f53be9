"""
Sizing the nets: activation shape and the width solver
======================================================

Two small pieces of machinery worth seeing in isolation.

First the activation: a soft leaky rectifier that is smooth everywhere (the
input-gradient losses need second derivatives) yet keeps a small negative
slope so scores are not flat below zero.

Second the width solver: model capacity is specified as a budget
P = rho * n * d, a fraction of the key matrix itself, and the hidden width
is the root of the quadratic that makes input plus hidden weights hit P.
Size tags XS..XXL are just preset values of rho.
"""

import numpy as np

from amips.nets import (BudgetSpec, NetSpec, activation, count_budget_params,
                        n_x_for_policy, solve_width, DEPTHS, INJECT_POLICIES,
                        RHO_TAGS)


def main():
    print("soft leaky rectifier (alpha=0.1, beta=20):")
    for x in (-2.0, -1.0, -0.1, 0.0, 0.1, 1.0, 2.0):
        print(f"  act({x:+.1f}) = {activation(x):+.6f}")
    print("  -> slope ~alpha for x << 0, ~1 for x >> 0, smooth at 0")

    # Budgets for the standard desk-scale key set.
    n, d = 2048, 16
    print(f"\nwidths for n={n}, d={d} (budget P = rho*n*d):")
    print(f"  {'tag':>4} {'rho':>5} {'depth':>5} {'policy':>11} "
          f"{'width':>5} {'realized':>8} {'target':>7} {'off':>6}")
    for tag in ("XS", "S", "M", "L", "XL", "XXL"):
        rho = RHO_TAGS[tag]
        for L in DEPTHS:
            for policy in INJECT_POLICIES:
                n_x = n_x_for_policy(L, policy)
                budget = BudgetSpec(rho=rho, n=n, d=d, L=L, n_x=n_x)
                h = solve_width(budget)
                spec = NetSpec(family="supportnet", L=L, h=h, d=d, c=1, n_x=n_x)
                realized = count_budget_params(spec)
                off = realized / budget.budget - 1.0
                print(f"  {tag:>4} {rho:>5.2f} {L:>5} {policy:>11} "
                      f"{h:>5} {realized:>8} {budget.budget:>7.0f} {off:>+6.1%}")

    print("\nsmall budgets at large depth overshoot: integer widths are "
          "coarse when the ideal width is near 1.")


if __name__ == "__main__":
    main()
