"""Finite-difference checks for the reverse-mode engine.

Central differences with step 1e-6 on float64 give ~1e-9 accuracy, far
tighter than the 1e-6 assertions here.
"""

import numpy as np
import pytest

from amips import autodiff as ad


def fd_grad(fn, x, eps=1e-6):
    """Central-difference gradient of a scalar fn at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = fn(x)
        flat[i] = orig - eps
        lo = fn(x)
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def check(build, shapes, seed):
    """build(*tensors) -> scalar Tensor; compare engine grads against FD."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]

    for i in range(len(arrays)):
        def scalar_fn(x, i=i):
            args = [a.copy() for a in arrays]
            args[i] = x
            return float(ad.value_of(build(*args)))

        leaves = [ad.Tensor(a.copy()) for a in arrays]
        out = build(*leaves)
        ad.backward(out)
        got = leaves[i].grad
        want = fd_grad(scalar_fn, arrays[i].copy())
        assert got is not None
        np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-8)


def test_elementwise_and_broadcast():
    check(lambda a, b: ad.reduce_sum(ad.square(ad.mul(a, b))), [(3, 4), (4,)], seed=0)
    check(lambda a, b: ad.reduce_sum(ad.div(a, ad.add(ad.square(b), 1.0))), [(2, 3), (2, 3)], seed=1)
    check(lambda a: ad.mean(ad.sub(a, 2.0)), [(5,)], seed=2)


def test_matmul_and_einsum():
    check(lambda a, b: ad.reduce_sum(ad.square(ad.matmul(a, b))), [(3, 4), (4, 2)], seed=3)
    check(lambda w, j: ad.reduce_sum(ad.square(ad.einsum("oh,bhd->bod", w, j))),
          [(2, 3), (4, 3, 5)], seed=4)
    check(lambda f, x: ad.reduce_sum(ad.square(ad.einsum("bjd,bd->bj", f, x))),
          [(4, 2, 3), (4, 3)], seed=5)


def test_reductions_axis_and_reshape():
    check(lambda a: ad.reduce_sum(ad.square(ad.reduce_sum(a, axis=1))), [(3, 4)], seed=6)
    check(lambda a: ad.reduce_sum(ad.square(ad.mean(a, axis=0))), [(3, 4)], seed=7)
    check(lambda a: ad.reduce_sum(ad.square(ad.reshape(a, (2, 6)))), [(3, 4)], seed=8)


def test_sqrt_relu():
    check(lambda a: ad.reduce_sum(ad.sqrt(ad.add(ad.square(a), 0.5))), [(6,)], seed=9)
    # keep entries away from the relu kink
    rng = np.random.default_rng(10)
    a = rng.standard_normal((5, 3))
    a[np.abs(a) < 0.1] = 0.3
    leaf = ad.Tensor(a.copy())
    out = ad.reduce_sum(ad.square(ad.relu(leaf)))
    ad.backward(out)
    want = fd_grad(lambda x: float(np.sum(np.maximum(x, 0.0) ** 2)), a.copy())
    np.testing.assert_allclose(leaf.grad, want, rtol=1e-6, atol=1e-9)


def test_activation_first_and_second_order():
    # soft_leaky backward uses the prime; soft_leaky_prime backward uses the
    # second derivative. Check both against FD, including large |x|.
    alpha, beta = 0.1, 20.0
    check(lambda a: ad.reduce_sum(ad.soft_leaky(a, alpha, beta)), [(7,)], seed=11)
    check(lambda a: ad.reduce_sum(ad.square(ad.soft_leaky_prime(a, alpha, beta))), [(7,)], seed=12)
    big = np.array([-60.0, -3.0, 0.0, 3.0, 60.0])
    out = ad.soft_leaky(big, alpha, beta)
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out[-1], big[-1], rtol=1e-12)  # slope-1 asymptote
    np.testing.assert_allclose(out[0], alpha * big[0], rtol=1e-12)


def test_diamond_graph_accumulates():
    # d/dx of x*x + x computed through two paths sharing one leaf
    leaf = ad.Tensor(np.array([1.5, -2.0]))
    out = ad.reduce_sum(ad.add(ad.mul(leaf, leaf), leaf))
    ad.backward(out)
    np.testing.assert_allclose(leaf.grad, 2 * leaf.value + 1.0)


def test_untaped_dispatch_matches():
    rng = np.random.default_rng(13)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    plain = ad.matmul(a, b)
    taped = ad.matmul(ad.Tensor(a), ad.Tensor(b))
    assert isinstance(plain, np.ndarray)
    np.testing.assert_array_equal(plain, taped.value)


def test_backward_rejects_vector_root():
    with pytest.raises(ValueError):
        ad.backward(ad.Tensor(np.zeros(3)))
