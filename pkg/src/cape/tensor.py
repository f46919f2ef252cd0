"""Dense float64 tensors with reverse-mode automatic differentiation.

Only rank-0 (scalars produced by reductions), rank-1 and rank-2 tensors are
supported, and broadcasting is limited to adding a row vector to every row of
a matrix. That is all the propagator, scoring and loss code needs.

Each differentiable op returns a new :class:`Tensor` holding references to its
inputs and a closure mapping the output gradient to input gradients. Calling
:meth:`Tensor.backward` on a scalar walks that graph once in reverse
topological order.
"""
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import DegenerateNorm, NotScalar, ShapeMismatch

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Build no graph inside the block (evaluation and scoring)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, name=None):
        data = np.array(data, dtype=np.float64)
        if data.ndim > 2:
            raise ShapeMismatch(f"tensors are at most rank 2, got shape {data.shape}")
        self.data = data
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    # -- construction helpers ---------------------------------------------

    @classmethod
    def _result(cls, data, parents, backward, op):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        out._op = op
        track = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._backward = backward if track else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise NotScalar(f"item() needs one element, tensor has shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    # -- reverse pass ------------------------------------------------------

    def graph(self):
        """Nodes reachable from this tensor, inputs before outputs."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(self.graph()):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            node.grad = g
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _sum_to_row(g, shape):
    if g.shape == shape:
        return g
    return g.sum(axis=0)


def _check_broadcast(a, b, op):
    if a.shape == b.shape:
        return
    if a.ndim == 2 and b.ndim == 1 and a.shape[1] == b.shape[0]:
        return
    if b.ndim == 2 and a.ndim == 1 and b.shape[1] == a.shape[0]:
        return
    raise ShapeMismatch(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g):
        return _sum_to_row(g, a.shape), _sum_to_row(g, b.shape)

    return Tensor._result(a.data + b.data, (a, b), backward, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g):
        return _sum_to_row(g, a.shape), -_sum_to_row(g, b.shape)

    return Tensor._result(a.data - b.data, (a, b), backward, "sub")


def mul(a, b):
    """Elementwise product of equal-shape tensors, or tensor times a python scalar."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)
        return Tensor._result(a.data * c, (a,), lambda g: (g * c,), "scale")
    if a.shape != b.shape:
        raise ShapeMismatch(f"mul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        return g * b.data, g * a.data

    return Tensor._result(a.data * b.data, (a, b), backward, "mul")


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul needs two matrices, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: inner dimensions differ, {a.shape} x {b.shape}")

    def backward(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._result(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a):
    if a.ndim != 2:
        raise ShapeMismatch(f"transpose needs a matrix, got {a.shape}")
    return Tensor._result(a.data.T.copy(), (a,), lambda g: (g.T,), "transpose")


def sum_all(a):
    shape = a.shape
    return Tensor._result(
        np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),), "sum")


def mean_all(a):
    shape, n = a.shape, a.data.size
    return Tensor._result(
        np.array(a.data.mean()), (a,), lambda g: (np.full(shape, float(g) / n),), "mean")


def relu(x):
    mask = x.data > 0
    return Tensor._result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def dropout(x, p, training, rng):
    """Inverted dropout: survivors are scaled by 1/(1-p) so eval mode is the identity."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return Tensor._result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def softmax_rows(x):
    if x.ndim != 2:
        raise ShapeMismatch(f"softmax_rows needs a matrix, got {x.shape}")
    y = kernels.softmax_rows(x.data)
    return Tensor._result(
        y, (x,), lambda g: (kernels.softmax_rows_backward(y, g),), "softmax_rows")


def log_softmax_rows(x):
    if x.ndim != 2:
        raise ShapeMismatch(f"log_softmax_rows needs a matrix, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=1, keepdims=True),)

    return Tensor._result(out, (x,), backward, "log_softmax_rows")


def layer_norm(x, gamma, beta, eps=1e-5):
    """Row-wise normalisation with population variance, then ``* gamma + beta``."""
    if x.ndim != 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeMismatch(
            f"layer_norm: x {x.shape}, gamma {gamma.shape}, beta {beta.shape}")
    out, xhat, rstd = kernels.layer_norm_forward(x.data, gamma.data, beta.data, eps)
    return Tensor._result(
        out, (x, gamma, beta),
        lambda g: kernels.layer_norm_backward(g, xhat, rstd, gamma.data),
        "layer_norm")


def concat_cols(tensors):
    tensors = [as_tensor(t) for t in tensors]
    rows = {t.shape[0] for t in tensors if t.ndim == 2}
    if len(rows) != 1 or any(t.ndim != 2 for t in tensors):
        raise ShapeMismatch(
            "concat_cols: incompatible shapes " + ", ".join(str(t.shape) for t in tensors))
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=1), tensors, backward, "concat_cols")


def concat_rows(tensors):
    tensors = [as_tensor(t) for t in tensors]
    cols = {t.shape[1] for t in tensors if t.ndim == 2}
    if len(cols) != 1 or any(t.ndim != 2 for t in tensors):
        raise ShapeMismatch(
            "concat_rows: incompatible shapes " + ", ".join(str(t.shape) for t in tensors))
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=0), tensors, backward, "concat_rows")


def slice_cols(x, start, stop):
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return Tensor._result(x.data[:, start:stop].copy(), (x,), backward, "slice_cols")


def take_rows(x, index):
    """Gather rows ``x[index]``; repeated indices accumulate in the gradient."""
    index = np.asarray(index, dtype=np.intp)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._result(x.data[index], (x,), backward, "take_rows")


def pick(x, cols):
    """Select ``x[i, cols[i]]`` for every row, giving a vector."""
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def backward(g):
        full = np.zeros(shape)
        full[rows, cols] = g
        return (full,)

    return Tensor._result(x.data[rows, cols], (x,), backward, "pick")


def l2_normalize_rows(x, min_norm=1e-12):
    norms = np.sqrt((x.data * x.data).sum(axis=1))
    bad = np.flatnonzero(norms < min_norm)
    if bad.size:
        raise DegenerateNorm(
            f"{bad.size} row(s) with norm below {min_norm:g} (first: row {bad[0]})")
    y = x.data / norms[:, None]

    def backward(g):
        return ((g - y * (g * y).sum(axis=1, keepdims=True)) / norms[:, None],)

    return Tensor._result(y, (x,), backward, "l2_normalize_rows")


def linear(x, weight, bias=None):
    out = matmul(x, weight)
    return out if bias is None else add(out, bias)
