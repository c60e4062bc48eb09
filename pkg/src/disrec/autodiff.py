"""Reverse-mode differentiation over a small, fixed operation set.

The joint objective is built from a handful of operations (sparse
propagation, dense affine maps, rectifier, row normalization, masked
log-sum-exp, row-wise inner products, softplus, reductions), so instead of
a general autodiff DSL each operation registers its own backward rule.
Every forward call appends a node to an implicit tape ordered by creation
sequence; :func:`backward` replays the tape in reverse and accumulates
gradients in a fixed order, which keeps runs bit-reproducible.

A tape belongs to a single training step and must not be shared across
threads.
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Mapping

import numpy as np

from .sparse import SparseAdjacency

__all__ = [
    "Tensor",
    "NonFiniteError",
    "as_tensor",
    "backward",
    "value_and_grad",
    "finite_diff_grad",
]

_SEQ = itertools.count()

NORM_EPS = 1e-12


class NonFiniteError(ArithmeticError):
    """A forward operation or gradient produced NaN or infinity."""


class Tensor:
    """A node of the recorded computation.

    ``value`` is always a float64 ndarray (0-d for scalars); ``grad`` is
    allocated lazily during the backward sweep.  Leaf tensors wrap parameter
    arrays without copying.
    """

    __slots__ = ("value", "grad", "parents", "backward_fn", "seq", "op")

    def __init__(
        self,
        value,
        parents: tuple["Tensor", ...] = (),
        backward_fn: Callable[[np.ndarray], None] | None = None,
        op: str = "leaf",
    ):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.seq = next(_SEQ)
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.value.shape})"


def as_tensor(x) -> Tensor:
    """Wrap arrays/scalars as constant leaves; pass tensors through."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(value: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"non-finite values produced by operation {op!r}")
    return value


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(g, copy=True)  # fresh buffer; g may alias an op temporary
    else:
        t.grad += g


def _node(value, parents, backward_fn, op) -> Tensor:
    return Tensor(_check_finite(np.asarray(value, dtype=np.float64), op), parents, backward_fn, op)


# ---------------------------------------------------------------------------
# operation set


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"add: shape mismatch {a.value.shape} vs {b.value.shape}")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _node(a.value + b.value, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"sub: shape mismatch {a.value.shape} vs {b.value.shape}")

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _node(a.value - b.value, (a, b), bw, "sub")


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = float(c)

    def bw(g):
        _accumulate(x, c * g)

    return _node(x.value * c, (x,), bw, "scale")


def add_bias(x, b) -> Tensor:
    """Row-broadcast bias addition: ``x + b`` with x (w, d), b (d,)."""
    x, b = as_tensor(x), as_tensor(b)
    if x.value.ndim != 2 or b.value.shape != (x.value.shape[1],):
        raise ValueError(f"add_bias: got x {x.value.shape}, b {b.value.shape}")

    def bw(g):
        _accumulate(x, g)
        _accumulate(b, g.sum(axis=0))

    return _node(x.value + b.value, (x, b), bw, "add_bias")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape[1] != b.value.shape[0]:
        raise ValueError(f"matmul: inner dims {a.value.shape} @ {b.value.shape}")

    def bw(g):
        _accumulate(a, g @ b.value.T)
        _accumulate(b, a.value.T @ g)

    return _node(a.value @ b.value, (a, b), bw, "matmul")


def matmul_nt(a, b) -> Tensor:
    """``a @ b.T`` for a (p, d), b (r, d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape[1] != b.value.shape[1]:
        raise ValueError(f"matmul_nt: trailing dims {a.value.shape} vs {b.value.shape}")

    def bw(g):
        _accumulate(a, g @ b.value)
        _accumulate(b, g.T @ a.value)

    return _node(a.value @ b.value.T, (a, b), bw, "matmul_nt")


def spmm(adj: SparseAdjacency, x) -> Tensor:
    """Sparse propagation ``A @ x``; the adjacency is a constant."""
    x = as_tensor(x)
    if x.value.shape[0] != adj.cols:
        raise ValueError(f"spmm: adjacency {adj.rows}x{adj.cols} vs input {x.value.shape}")
    adj_t = adj.transpose()

    def bw(g):
        _accumulate(x, adj_t.propagate(g))

    return _node(adj.propagate(x.value), (x,), bw, "spmm")


def gather_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        np.add.at(x.grad, idx, g)

    return _node(x.value[idx], (x,), bw, "gather_rows")


def vstack2(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    p = a.value.shape[0]

    def bw(g):
        _accumulate(a, g[:p])
        _accumulate(b, g[p:])

    return _node(np.concatenate([a.value, b.value], axis=0), (a, b), bw, "vstack2")


def slice_rows(x, lo: int, hi: int) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        x.grad[lo:hi] += g

    return _node(x.value[lo:hi], (x,), bw, "slice_rows")


def average(tensors: Iterable[Tensor]) -> Tensor:
    """Arithmetic mean of equal-shaped tensors (the layer readout)."""
    ts = [as_tensor(t) for t in tensors]
    k = len(ts)
    if k == 0:
        raise ValueError("average: empty input")
    total = ts[0].value.copy()
    for t in ts[1:]:
        total += t.value

    def bw(g):
        share = g / k
        for t in ts:
            _accumulate(t, share)

    return _node(total / k, tuple(ts), bw, "average")


def relu(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accumulate(x, g * (x.value > 0))

    return _node(np.maximum(x.value, 0.0), (x,), bw, "relu")


def normalize_rows(x, eps: float = NORM_EPS) -> Tensor:
    """Rows scaled to unit length; ``eps`` keeps zero rows finite."""
    x = as_tensor(x)
    raw = np.sqrt(np.sum(x.value * x.value, axis=1, keepdims=True))
    denom = raw + eps
    out = x.value / denom

    def bw(g):
        dot = np.sum(g * x.value, axis=1, keepdims=True)
        safe_raw = np.where(raw > 0.0, raw, 1.0)
        correction = np.where(raw > 0.0, x.value * dot / (safe_raw * denom * denom), 0.0)
        _accumulate(x, g / denom - correction)

    return _node(out, (x,), bw, "normalize_rows")


def transpose(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accumulate(x, g.T)

    return _node(x.value.T.copy(), (x,), bw, "transpose")


def concat_cols(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    p = a.value.shape[1]

    def bw(g):
        _accumulate(a, g[:, :p])
        _accumulate(b, g[:, p:])

    return _node(np.concatenate([a.value, b.value], axis=1), (a, b), bw, "concat_cols")


def masked_logsumexp_rows(x, exclude: np.ndarray) -> Tensor:
    """Row-wise log-sum-exp skipping entries where ``exclude`` is True.

    Uses max subtraction, so the result is overflow-safe for any finite
    input.  Every row must keep at least one entry.
    """
    x = as_tensor(x)
    masked = np.where(exclude, -np.inf, x.value)
    high = masked.max(axis=1, keepdims=True)
    expd = np.exp(masked - high)
    sums = expd.sum(axis=1, keepdims=True)
    out = (high + np.log(sums)).ravel()

    def bw(g):
        soft = expd / sums
        _accumulate(x, soft * g[:, None])

    return _node(out, (x,), bw, "masked_logsumexp_rows")


def paired_logsumexp_excl_diag(a, b) -> Tensor:
    """Row-wise log-sum-exp over ``[a[j, :], b[j, k != j]]`` for square a, b.

    Fused form of the InfoNCE denominator: one cross-view block taken whole
    and one intra-view block with the anchor's own entry excluded, without
    materializing the concatenation.
    """
    a, b = as_tensor(a), as_tensor(b)
    w = a.value.shape[0]
    if a.value.shape != (w, w) or b.value.shape != (w, w):
        raise ValueError(f"paired_logsumexp_excl_diag: need equal square inputs, got {a.value.shape} and {b.value.shape}")
    b_masked = b.value.copy()
    np.fill_diagonal(b_masked, -np.inf)
    high = np.maximum(a.value.max(axis=1), b_masked.max(axis=1))[:, None]
    exp_a = np.exp(a.value - high)
    exp_b = np.exp(b_masked - high)
    sums = exp_a.sum(axis=1, keepdims=True) + exp_b.sum(axis=1, keepdims=True)
    out = (high + np.log(sums)).ravel()

    def bw(g):
        coeff = (g[:, None] / sums)
        _accumulate(a, exp_a * coeff)
        _accumulate(b, exp_b * coeff)

    return _node(out, (a, b), bw, "paired_logsumexp_excl_diag")


def take_diag(x) -> Tensor:
    x = as_tensor(x)
    if x.value.shape[0] != x.value.shape[1]:
        raise ValueError(f"take_diag: not square {x.value.shape}")

    def bw(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        idx = np.arange(x.value.shape[0])
        x.grad[idx, idx] += g

    return _node(np.diagonal(x.value).copy(), (x,), bw, "take_diag")


def rowwise_dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.shape != b.value.shape:
        raise ValueError(f"rowwise_dot: shape mismatch {a.value.shape} vs {b.value.shape}")

    def bw(g):
        _accumulate(a, g[:, None] * b.value)
        _accumulate(b, g[:, None] * a.value)

    return _node(np.sum(a.value * b.value, axis=1), (a, b), bw, "rowwise_dot")


def softplus(x) -> Tensor:
    """``log(1 + e^x)`` in the overflow-safe fused form."""
    x = as_tensor(x)
    out = np.maximum(x.value, 0.0) + np.log1p(np.exp(-np.abs(x.value)))

    def bw(g):
        z = np.exp(-np.abs(x.value))
        sigma = np.where(x.value >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
        _accumulate(x, sigma * g)

    return _node(out, (x,), bw, "softplus")


def neg(x) -> Tensor:
    return scale(x, -1.0)


def sum_all(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        x.grad += g  # 0-d broadcast

    return _node(x.value.sum(), (x,), bw, "sum_all")


def sum_of_squares(x) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        _accumulate(x, 2.0 * x.value * g)

    return _node(np.sum(x.value * x.value), (x,), bw, "sum_of_squares")


# ---------------------------------------------------------------------------
# backward sweep and gradient entry points


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every reachable tensor's ``grad``.

    The reverse sweep visits nodes in descending creation order, which is a
    valid topological order because inputs always predate their consumers.
    """
    if root.value.shape != ():
        raise ValueError(f"backward needs a scalar root, got shape {root.value.shape}")
    seen: set[int] = set()
    nodes: list[Tensor] = []
    stack = [root]
    while stack:
        node = stack.pop()
        if id(node) in seen:
            continue
        seen.add(id(node))
        nodes.append(node)
        stack.extend(node.parents)
    nodes.sort(key=lambda n: n.seq, reverse=True)
    root.grad = np.ones_like(root.value)
    for node in nodes:
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


def value_and_grad(f, arrays: Mapping[str, np.ndarray]):
    """Evaluate ``f`` over leaf tensors and return ``(value, gradients)``.

    ``f`` receives ``{name: Tensor}`` and must return a scalar Tensor.
    Arrays untouched by the computation get exact-zero gradients.
    """
    leaves = {name: Tensor(arr) for name, arr in arrays.items()}
    out = f(leaves)
    if not isinstance(out, Tensor):
        raise TypeError("objective must return a Tensor")
    backward(out)
    grads = {
        name: (leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
        for name, leaf in leaves.items()
    }
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    return float(out.value), grads


def finite_diff_grad(f, arrays: Mapping[str, np.ndarray], epsilon: float = 1e-5):
    """Central-difference gradients, the independent oracle for the tape.

    ``f`` must be a deterministic function of the array values (fix any
    augmentation or sampling seeds before calling).  The arrays are
    perturbed in place and restored exactly.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    arrays = dict(arrays)

    def forward() -> float:
        leaves = {name: Tensor(arr) for name, arr in arrays.items()}
        return float(f(leaves).value)

    grads: dict[str, np.ndarray] = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = forward()
            flat[i] = orig - epsilon
            f_minus = forward()
            flat[i] = orig
            gflat[i] = (f_plus - f_minus) / (2.0 * epsilon)
        grads[name] = grad
    return grads
