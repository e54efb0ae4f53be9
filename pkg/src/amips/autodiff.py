"""Minimal reverse-mode automatic differentiation over numpy arrays.

The training losses differentiate expressions that already contain input
gradients of the network, so the engine exposes the activation derivative as
a primitive of its own (its backward rule uses the second derivative). Every
op dispatches on its argument types: with plain ndarrays it just computes,
with Tensors it also records the backward closure, so forward evaluation and
taped evaluation share one code path.

Values are float64 throughout. Graphs here are small (hundreds of nodes), so
a list-of-parents tape with topological replay is plenty.
"""

import numpy as np


class Tensor:
    """A node in the tape: a float64 array plus backward bookkeeping."""

    __slots__ = ("value", "grad", "_pairs")

    def __init__(self, value, pairs=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._pairs = pairs  # tuple of (parent Tensor, g -> grad contribution)

    @property
    def shape(self):
        return self.value.shape

    # arithmetic sugar; scalars and ndarrays are treated as constants
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def value_of(x):
    return x.value if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _any_tensor(*args):
    return any(isinstance(a, Tensor) for a in args)


def _unbroadcast(grad, shape):
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(value, *pairs):
    live = tuple((p, fn) for p, fn in pairs if isinstance(p, Tensor))
    return Tensor(value, live)


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into .grad over the whole tape."""
    if root.value.size != 1:
        raise ValueError("backward expects a scalar root")
    topo, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node._pairs:
            stack.append((parent, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node.grad is None:
            continue
        for parent, fn in node._pairs:
            contrib = fn(node.grad)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


# --- primitives ---------------------------------------------------------


def add(a, b):
    av, bv = value_of(a), value_of(b)
    out = av + bv
    if not _any_tensor(a, b):
        return out
    return _node(out, (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(g, bv.shape)))


def sub(a, b):
    av, bv = value_of(a), value_of(b)
    out = av - bv
    if not _any_tensor(a, b):
        return out
    return _node(out, (a, lambda g: _unbroadcast(g, av.shape)),
                 (b, lambda g: _unbroadcast(-g, bv.shape)))


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    out = av * bv
    if not _any_tensor(a, b):
        return out
    return _node(out, (a, lambda g: _unbroadcast(g * bv, av.shape)),
                 (b, lambda g: _unbroadcast(g * av, bv.shape)))


def div(a, b):
    av, bv = value_of(a), value_of(b)
    out = av / bv
    if not _any_tensor(a, b):
        return out
    return _node(out, (a, lambda g: _unbroadcast(g / bv, av.shape)),
                 (b, lambda g: _unbroadcast(-g * av / (bv * bv), bv.shape)))


def matmul(a, b):
    """2-D matrix product only; higher-rank contractions go through einsum."""
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul is 2-D only; use einsum")
    out = av @ bv
    if not _any_tensor(a, b):
        return out
    return _node(out, (a, lambda g: g @ bv.T), (b, lambda g: av.T @ g))


def einsum(spec, a, b):
    """Two-operand einsum. Labels may not repeat inside one operand."""
    av, bv = value_of(a), value_of(b)
    out = np.einsum(spec, av, bv)
    if not _any_tensor(a, b):
        return out
    ins, out_spec = spec.replace(" ", "").split("->")
    sa, sb = ins.split(",")
    return _node(out,
                 (a, lambda g: np.einsum(f"{out_spec},{sb}->{sa}", g, bv)),
                 (b, lambda g: np.einsum(f"{out_spec},{sa}->{sb}", g, av)))


def reduce_sum(a, axis=None):
    av = value_of(a)
    out = av.sum(axis=axis)
    if not _any_tensor(a):
        return out

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, av.shape).copy()
        g = np.expand_dims(g, axis)
        return np.broadcast_to(g, av.shape).copy()

    return _node(out, (a, vjp))


def mean(a, axis=None):
    av = value_of(a)
    n = av.size if axis is None else av.shape[axis]
    return mul(reduce_sum(a, axis=axis), 1.0 / n)


def square(a):
    av = value_of(a)
    out = av * av
    if not _any_tensor(a):
        return out
    return _node(out, (a, lambda g: g * (2.0 * av)))


def sqrt(a):
    av = value_of(a)
    out = np.sqrt(av)
    if not _any_tensor(a):
        return out
    return _node(out, (a, lambda g: g * (0.5 / out)))


def relu(a):
    av = value_of(a)
    out = np.maximum(av, 0.0)
    if not _any_tensor(a):
        return out
    return _node(out, (a, lambda g: g * (av > 0.0)))


def reshape(a, shape):
    av = value_of(a)
    out = av.reshape(shape)
    if not _any_tensor(a):
        return out
    return _node(out, (a, lambda g: g.reshape(av.shape)))


# --- soft leaky rectifier family ----------------------------------------


def _sigmoid(t):
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(t):
    # log(1 + e^t) without overflow: max(t, 0) + log1p(e^-|t|)
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def soft_leaky(a, alpha, beta):
    """alpha*x + ((1-alpha)/beta) * log(1 + e^(beta*x)), elementwise."""
    av = value_of(a)
    out = alpha * av + ((1.0 - alpha) / beta) * _softplus(beta * av)
    if not _any_tensor(a):
        return out
    return _node(out, (a, lambda g: g * (alpha + (1.0 - alpha) * _sigmoid(beta * av))))


def soft_leaky_prime(a, alpha, beta):
    """First derivative of soft_leaky, itself differentiable once more."""
    av = value_of(a)
    s = _sigmoid(beta * av)
    out = alpha + (1.0 - alpha) * s
    if not _any_tensor(a):
        return out
    return _node(out, (a, lambda g: g * ((1.0 - alpha) * beta * s * (1.0 - s))))
