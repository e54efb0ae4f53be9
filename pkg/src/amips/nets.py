"""Score and key prediction networks.

Two families share one trunk, a residual-capable MLP with soft leaky
rectifier units and optional re-injection of the raw input at selected
hidden layers:

    z_1     = act(W_x0 x + b_0)
    z_{i+1} = act(W_zi z_i [+ W_xi x] + b_i)        (plus z_i when residual)
    out     = W_out z_L + b_out

The "supportnet" family emits c scores, one per key cluster, keeps every
weight that multiplies a hidden state non-negative (softly, via a penalty
during training) so each output is convex in x, and is usually wrapped to be
positively 1-homogeneous:

    H(x) = ||x|| * g(x / ||x||)
    dH_j/dx = g_j(u) u + (I - u u^T) dg_j/du,   u = x / ||x||

With that wrapper <dH_j/dx, x> = H_j(x) exactly, so a gradient that matches
the optimal key also pins the score. Predicted keys are the input gradients.

The "keynet" family emits c*d values read as c key vectors directly.

Widths come from a parameter budget P = rho*n*d. Writing D = (1+n_x)*d, the
budgeted parameters (input projections plus hidden-to-hidden weights) satisfy
(L-1)h^2 + D h = P, so

    h = (sqrt(D^2 + 4(L-1)P) - D) / (2(L-1))    (L >= 2; P/D when L = 1)

rounded to the nearest integer, floor 1.

Model files ("AMNP") store the net spec followed by float64 tensors in canonical
order (w_x0, b0, then per hidden layer w_zi, optional w_xi, bi, then w_out,
b_out):

    magic  4 bytes b"AMNP"
    family u8      0 = supportnet, 1 = keynet
    L,h,d,c,n_x    u32 LE each
    flags  u8      bit0 residual, bit1 homogenize
    alpha  f64 LE
    beta   f64 LE
"""

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import DataError, FormatError
from .store import _atomic_write

PARAMS_MAGIC = b"AMNP"
_N_HEADER = struct.Struct("<4sBIIIIIBdd")

FAMILIES = ("supportnet", "keynet")

RHO_TAGS = {"XS": 0.01, "S": 0.05, "M": 0.10, "L": 0.20, "XL": 0.40, "XXL": 0.50}
DEPTHS = (4, 8, 16)
INJECT_POLICIES = ("every-layer", "every-4th")

ALPHA_DEFAULT = 0.1
BETA_DEFAULT = 20.0


@dataclass(frozen=True)
class NetSpec:
    """Architecture hyperparameters; shapes follow from these alone."""

    family: str
    L: int
    h: int
    d: int
    c: int = 1
    n_x: int = 0
    residual: bool = False
    homogenize: bool = False
    alpha: float = ALPHA_DEFAULT
    beta: float = BETA_DEFAULT

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}")
        if self.L < 1 or self.h < 1 or self.d < 1 or self.c < 1:
            raise DataError("L, h, d, c must all be >= 1")
        if not 0 <= self.n_x <= self.L - 1:
            raise DataError(f"n_x must be in [0, L-1], got {self.n_x}")
        if self.homogenize and self.family != "supportnet":
            raise DataError("homogenize applies to the supportnet family only")
        if self.beta <= 0:
            raise DataError("beta must be positive")

    @property
    def d_out(self) -> int:
        return self.c if self.family == "supportnet" else self.c * self.d


@dataclass(frozen=True)
class BudgetSpec:
    """Parameter budget P = rho*n*d for a given depth and injection count."""

    rho: float
    n: int
    d: int
    L: int
    n_x: int

    @property
    def budget(self) -> float:
        return self.rho * self.n * self.d


def n_x_for_policy(L: int, policy: str) -> int:
    """every-layer injects at all L-1 hidden layers; every-4th at ~L/4."""
    if policy == "every-layer":
        return L - 1
    if policy == "every-4th":
        return max(1, round(L / 4)) if L > 1 else 0
    raise DataError(f"unknown injection policy {policy!r}")


def injection_layers(L: int, n_x: int):
    """Indices in 1..L-1 receiving the raw input, spread evenly, last included."""
    if n_x == 0:
        return frozenset()
    return frozenset(math.ceil(m * (L - 1) / n_x) for m in range(1, n_x + 1))


def solve_width(budget: BudgetSpec) -> int:
    """Width whose budgeted parameter count best matches budget.budget."""
    P = budget.budget
    if P <= 0:
        raise DataError("parameter budget must be positive")
    D = (1 + budget.n_x) * budget.d
    if budget.L == 1:
        h = P / D
    else:
        a = budget.L - 1
        h = (math.sqrt(D * D + 4 * a * P) - D) / (2 * a)
    return max(1, round(h))


def count_budget_params(spec: NetSpec) -> int:
    """The two terms the width formula balances: input + hidden weights."""
    return (spec.L - 1) * spec.h * spec.h + (1 + spec.n_x) * spec.d * spec.h


def count_total_params(spec: NetSpec) -> int:
    """Everything, including the output layer and biases."""
    return (count_budget_params(spec) + spec.h * spec.d_out
            + spec.L * spec.h + spec.d_out)


def activation(x, alpha: float = ALPHA_DEFAULT, beta: float = BETA_DEFAULT):
    """Soft leaky rectifier: alpha*x + ((1-alpha)/beta)*log(1+e^(beta*x))."""
    return ad.soft_leaky(x, alpha, beta)


# --- parameters ----------------------------------------------------------


@dataclass(frozen=True)
class NetParams:
    """Named float64 tensors in the canonical file order."""

    tensors: dict

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "NetParams":
        return NetParams({k: v.copy() for k, v in self.tensors.items()})


def param_shapes(spec: NetSpec) -> dict:
    """Canonical name -> shape mapping, in file order."""
    shapes = {"w_x0": (spec.h, spec.d), "b0": (spec.h,)}
    inject = injection_layers(spec.L, spec.n_x)
    for i in range(1, spec.L):
        shapes[f"w_z{i}"] = (spec.h, spec.h)
        if i in inject:
            shapes[f"w_x{i}"] = (spec.h, spec.d)
        shapes[f"b{i}"] = (spec.h,)
    shapes["w_out"] = (spec.d_out, spec.h)
    shapes["b_out"] = (spec.d_out,)
    return shapes


def nonneg_names(spec: NetSpec):
    """Weights that must stay non-negative to keep supportnet outputs convex:
    everything multiplying a hidden state, output layer included."""
    if spec.family != "supportnet":
        return ()
    return tuple(f"w_z{i}" for i in range(1, spec.L)) + ("w_out",)


def init_params(spec: NetSpec, seed: int) -> NetParams:
    """Fan-in scaled Gaussian init.

    Convexity-constrained weights are drawn as |N(0, s^2)| with s halved,
    compensating the folded distribution's inflated mean. Biases start at 0.
    """
    rng = np.random.default_rng(seed)
    constrained = set(nonneg_names(spec))
    tensors = {}
    for name, shape in param_shapes(spec).items():
        if name.startswith("b"):
            tensors[name] = np.zeros(shape)
            continue
        fan_in = shape[1]
        if name in constrained:
            s = 0.5 / math.sqrt(fan_in)
            tensors[name] = np.abs(rng.standard_normal(shape)) * s
        else:
            tensors[name] = rng.standard_normal(shape) / math.sqrt(fan_in)
    return NetParams(tensors)


def save_params(spec: NetSpec, params: NetParams, path: str) -> None:
    flags = (1 if spec.residual else 0) | (2 if spec.homogenize else 0)
    header = _N_HEADER.pack(PARAMS_MAGIC, FAMILIES.index(spec.family), spec.L,
                            spec.h, spec.d, spec.c, spec.n_x, flags,
                            spec.alpha, spec.beta)
    body = b"".join(np.ascontiguousarray(params[name], dtype="<f8").tobytes()
                    for name in param_shapes(spec))
    _atomic_write(path, header + body)


def load_params(path: str):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _N_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, fam, L, h, d, c, n_x, flags, alpha, beta = _N_HEADER.unpack_from(blob)
    if magic != PARAMS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if fam >= len(FAMILIES):
        raise FormatError(f"{path}: unknown family tag {fam}")
    spec = NetSpec(family=FAMILIES[fam], L=L, h=h, d=d, c=c, n_x=n_x,
                   residual=bool(flags & 1), homogenize=bool(flags & 2),
                   alpha=alpha, beta=beta)
    offset = _N_HEADER.size
    tensors = {}
    for name, shape in param_shapes(spec).items():
        nbytes = int(np.prod(shape)) * 8
        if offset + nbytes > len(blob):
            raise FormatError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)),
                                      offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return spec, NetParams(tensors)


# --- evaluation ----------------------------------------------------------


def _as_batch(x, d: int):
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise DataError(f"input shape {arr.shape} incompatible with d={d}")
    return arr, single


def _trunk(spec: NetSpec, params, X: np.ndarray, with_jac: bool):
    """Shared batch forward (and forward-mode input Jacobian) of the raw MLP.

    params values may be ndarrays or autodiff Tensors; the return type
    follows. X is always a constant (B, d) float64 array.
    """
    a, b = spec.alpha, spec.beta
    B = X.shape[0]
    pre = ad.add(ad.einsum("hd,bd->bh", params["w_x0"], X), params["b0"])
    Z = ad.soft_leaky(pre, a, b)
    J = None
    if with_jac:
        s = ad.soft_leaky_prime(pre, a, b)
        J = ad.einsum("bh,hd->bhd", s, params["w_x0"])
    inject = injection_layers(spec.L, spec.n_x)
    for i in range(1, spec.L):
        pre = ad.add(ad.einsum("oh,bh->bo", params[f"w_z{i}"], Z), params[f"b{i}"])
        Jpre = ad.einsum("oh,bhd->bod", params[f"w_z{i}"], J) if with_jac else None
        if i in inject:
            wx = params[f"w_x{i}"]
            pre = ad.add(pre, ad.einsum("hd,bd->bh", wx, X))
            if with_jac:
                Jpre = ad.add(Jpre, wx)  # (h, d) broadcasts over the batch
        act = ad.soft_leaky(pre, a, b)
        if with_jac:
            s3 = ad.reshape(ad.soft_leaky_prime(pre, a, b), (B, spec.h, 1))
            Jact = ad.mul(s3, Jpre)
        if spec.residual:
            Z = ad.add(Z, act)
            if with_jac:
                J = ad.add(J, Jact)
        else:
            Z = act
            if with_jac:
                J = Jact
    out = ad.add(ad.einsum("oh,bh->bo", params["w_out"], Z), params["b_out"])
    Jout = ad.einsum("oh,bhd->bod", params["w_out"], J) if with_jac else None
    return out, Jout


def _radial(X: np.ndarray):
    r = np.linalg.norm(X, axis=1)
    if np.any(r < 1e-12):
        raise DataError(f"zero row {int(np.argmax(r < 1e-12))} cannot be homogenized")
    return r, X / r[:, None]


def forward(spec: NetSpec, params, x):
    """Raw outputs: (c,) scores for supportnet, (c*d,) values for keynet.

    Accepts a single vector or an (N, d) batch (then returns (N, d_out)).
    """
    X, single = _as_batch(x, spec.d)
    if spec.homogenize:
        r, u = _radial(X)
        out = ad.mul(_trunk(spec, params, u, False)[0], r[:, None])
    else:
        out = _trunk(spec, params, X, False)[0]
    if single and not isinstance(out, ad.Tensor):
        return out[0]
    return out


def input_gradient(spec: NetSpec, params, x):
    """Jacobian of the outputs w.r.t. the input: (d_out, d) per query.

    For the homogenized supportnet this is the wrapper's closed form, which
    satisfies <grad_j, x> = f_j(x) identically.
    """
    X, single = _as_batch(x, spec.d)
    if spec.homogenize:
        _, u = _radial(X)
        g, Jg = _trunk(spec, params, u, True)
        radial_part = ad.einsum("bj,bd->bjd", g, u)
        along = ad.einsum("bjd,bd->bj", Jg, u)
        J = ad.add(radial_part, ad.sub(Jg, ad.einsum("bj,bd->bjd", along, u)))
    else:
        _, J = _trunk(spec, params, X, True)
    if single and not isinstance(J, ad.Tensor):
        return J[0]
    return J


def predict_keys(spec: NetSpec, params, x):
    """Predicted optimal key per cluster, shape (c, d) per query.

    supportnet reads keys off its input gradient; keynet reshapes its output.
    """
    X, single = _as_batch(x, spec.d)
    if spec.family == "supportnet":
        K = input_gradient(spec, params, X)
    else:
        out = forward(spec, params, X)
        K = ad.reshape(out, (X.shape[0], spec.c, spec.d))
    if single and not isinstance(K, ad.Tensor):
        return K[0]
    return K


def clamp_nonneg(spec: NetSpec, params: NetParams) -> NetParams:
    """Copy with convexity-constrained weights clipped at zero (test helper)."""
    out = params.copy()
    for name in nonneg_names(spec):
        out.tensors[name] = np.maximum(out.tensors[name], 0.0)
    return out


def strip_wrapper(spec: NetSpec) -> NetSpec:
    """Same net without the homogenizing wrapper."""
    return replace(spec, homogenize=False)
