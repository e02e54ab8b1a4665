"""Dense float tensors with reverse-mode automatic differentiation.

NumPy holds the data; every differentiable op records a backward closure so a
single backward() call propagates gradients through the recorded graph.
Training runs in float32. float64 is used by the finite-difference checks,
where float32 rounding noise would drown the comparison.

Every forward op verifies its output is finite and raises FiniteError
otherwise: at desk scale an immediate abort with the op name beats a NaN
surfacing three modules later.
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "FiniteError",
    "tensor",
    "constant",
    "no_grad",
    "backward",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "take_rows",
    "take_per_row",
    "row_bincount",
    "softmax",
    "log_softmax",
    "tanh",
    "sigmoid",
    "gelu",
    "log",
    "clamp_min",
    "layer_norm",
    "dropout",
]

GELU_SCALE = 0.7978845608028654  # sqrt(2/pi)
GELU_CUBIC = 0.044715


class FiniteError(ArithmeticError):
    """A forward op produced NaN or Inf."""


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (decoding, evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float array plus the graph edge that produced it.

    Leaf tensors (parameters, inputs) have no parents. Op outputs carry a
    backward closure that routes the output gradient to each parent's .grad
    accumulator. Data is never mutated after construction except by the
    optimizer, which only touches leaves.
    """

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.data = data
        self.requires_grad = requires_grad
        self.grad = None
        self.op = op
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self) -> "Graph":
        return backward(self)

    def sum(self) -> "Tensor":
        data = self.data.sum()

        def bwd(g):
            _accumulate(self, np.broadcast_to(g, self.data.shape))

        return _out(np.asarray(data, dtype=self.dtype), (self,), bwd, "sum")

    def mean(self) -> "Tensor":
        scale = 1.0 / self.data.size
        data = self.data.mean()

        def bwd(g):
            _accumulate(self, np.broadcast_to(g * scale, self.data.shape).astype(self.dtype))

        return _out(np.asarray(data, dtype=self.dtype), (self,), bwd, "mean")

    # Operator sugar; floats are promoted to constants of the same dtype.
    def __add__(self, other):
        return add(self, _as_tensor(other, self.dtype))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other, self.dtype))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, op={self.op!r}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False, dtype=np.float32) -> Tensor:
    """Make a leaf tensor from array-like data."""
    arr = np.asarray(data, dtype=dtype)
    if arr.ndim and not arr.flags["C_CONTIGUOUS"]:
        # keep 0-d scalars 0-d: ascontiguousarray would promote them to (1,)
        arr = np.ascontiguousarray(arr)
    if not np.all(np.isfinite(arr)):
        raise FiniteError("non-finite values in tensor input")
    return Tensor(arr, requires_grad=requires_grad)


def constant(data, dtype=np.float32) -> Tensor:
    return tensor(data, requires_grad=False, dtype=dtype)


def _as_tensor(value, dtype) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return constant(np.asarray(value, dtype=dtype), dtype=dtype)


def _out(data, parents, backward_fn, op) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise FiniteError(f"non-finite values produced by op {op!r}")
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def _accumulate(t: Tensor, g: np.ndarray):
    if t.grad is None:
        t.grad = g.astype(t.dtype, copy=True)
    else:
        t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to `shape` after numpy broadcasting in forward."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


class Graph:
    """The op nodes reachable from a root, in topological order.

    Gradient accumulators live on the tensors themselves; this object only
    fixes the traversal. run() seeds the root with ones and fires each
    node's backward closure exactly once, in reverse topological order.
    """

    def __init__(self, root: Tensor):
        order = []
        visited = set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        self.nodes = order  # parents precede children

    def run(self, root: Tensor):
        _accumulate(root, np.ones((), dtype=root.dtype))
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def backward(loss: Tensor) -> Graph:
    """Populate .grad for every requires_grad tensor reachable from `loss`.

    Repeated calls without zero_grad accumulate. The loss must be scalar.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    graph = Graph(loss)
    graph.run(loss)
    return graph


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    return _out(data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(-g, b.shape))

    return _out(data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    return _out(data, (a, b), bwd, "mul")


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accumulate(a, -g)

    return _out(-a.data, (a,), bwd, "neg")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D operands or equal-batch 3-D stacks."""
    if a.ndim != b.ndim or a.ndim not in (2, 3):
        raise ValueError(f"matmul needs matching 2-D or 3-D operands, got {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bwd(g):
        _accumulate(a, g @ np.swapaxes(b.data, -1, -2))
        _accumulate(b, np.swapaxes(a.data, -1, -2) @ g)

    return _out(data, (a, b), bwd, "matmul")


def transpose(a: Tensor, axes=None) -> Tensor:
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    inverse = None if axes is None else np.argsort(axes)

    def bwd(g):
        _accumulate(a, np.transpose(g, inverse))

    return _out(data, (a,), bwd, "transpose")


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape

    def bwd(g):
        _accumulate(a, g.reshape(old))

    return _out(a.data.reshape(shape), (a,), bwd, "reshape")


def concat(parts: Sequence[Tensor], axis=0) -> Tensor:
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for part, piece in zip(parts, np.split(g, splits, axis=axis)):
            _accumulate(part, piece)

    return _out(data, tuple(parts), bwd, "concat")


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows by index (embedding lookup). Duplicate indices sum in backward."""
    idx = np.asarray(indices, dtype=np.int64)
    data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        _accumulate(a, full)

    return _out(data, (a,), bwd, "take_rows")


def take_per_row(a: Tensor, cols) -> Tensor:
    """Pick one column per row: out[i] = a[i, cols[i]]."""
    idx = np.asarray(cols, dtype=np.int64)
    rows = np.arange(a.shape[0])
    data = np.ascontiguousarray(a.data[rows, idx])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[rows, idx] = g
        _accumulate(a, full)

    return _out(data, (a,), bwd, "take_per_row")


def row_bincount(w: Tensor, cols, size: int) -> Tensor:
    """Scatter-add each row of w into `size` bins: out[i, cols[j]] += w[i, j]."""
    idx = np.asarray(cols, dtype=np.int64)
    n = w.shape[0]
    flat = (np.arange(n)[:, None] * size + idx[None, :]).ravel()
    data = np.bincount(flat, weights=w.data.ravel(), minlength=n * size)
    data = data.reshape(n, size).astype(w.dtype)

    def bwd(g):
        _accumulate(w, np.ascontiguousarray(g[:, idx]))

    return _out(data, (w,), bwd, "row_bincount")


def softmax(a: Tensor, axis=-1) -> Tensor:
    """Probabilities along `axis`, computed with max-subtraction."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - inner))

    return _out(y, (a,), bwd, "softmax")


def log_softmax(a: Tensor, axis=-1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def bwd(g):
        _accumulate(a, g - np.exp(y) * g.sum(axis=axis, keepdims=True))

    return _out(y, (a,), bwd, "log_softmax")


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def bwd(g):
        _accumulate(a, g * (1.0 - y * y))

    return _out(y, (a,), bwd, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    y = y.astype(a.dtype)

    def bwd(g):
        _accumulate(a, g * y * (1.0 - y))

    return _out(y, (a,), bwd, "sigmoid")


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU: 0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))."""
    x = a.data
    inner = GELU_SCALE * (x + GELU_CUBIC * x * x * x)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def bwd(g):
        d_inner = GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        _accumulate(a, g * local)

    return _out(y, (a,), bwd, "gelu")


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a.data)

    def bwd(g):
        _accumulate(a, g / a.data)

    return _out(y, (a,), bwd, "log")


def clamp_min(a: Tensor, floor: float) -> Tensor:
    """Elementwise max(a, floor); gradient is blocked where the clamp binds."""
    keep = a.data > floor

    def bwd(g):
        _accumulate(a, g * keep)

    return _out(np.maximum(a.data, floor), (a,), bwd, "clamp_min")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean and unit variance, then scale and shift."""
    width = x.shape[-1]
    if width == 0:
        raise ValueError("layer_norm on zero-length vectors")
    if gain.shape != (width,) or bias.shape != (width,):
        raise ValueError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    y = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        _accumulate(gain, (g * xhat).sum(axis=lead))
        _accumulate(bias, g.sum(axis=lead))
        gx = g * gain.data
        term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
        _accumulate(x, (term * inv).astype(x.dtype))

    return _out(y.astype(x.dtype), (x, gain, bias), bwd, "layer_norm")


def dropout(a: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout. Identity when rng is None (eval) or rate is 0."""
    if rng is None or rate <= 0.0:
        return a
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    scale = 1.0 / (1.0 - rate)
    mask = (rng.random(a.shape) >= rate).astype(a.dtype) * scale

    def bwd(g):
        _accumulate(a, g * mask)

    return _out(a.data * mask, (a,), bwd, "dropout")
