"""Dense float64 tensors with taped reverse-mode differentiation.

Everything downstream (enhancement blocks, graph convolution, fusion,
classifier) is expressed in the ops defined here. Arrays are per-conversation
sized (tens of rows), so all storage is dense numpy and the tape is rebuilt
on every forward pass.
"""
from __future__ import annotations

import contextlib
import math

import numpy as np


class ShapeError(ValueError):
    pass


class NumericsError(FloatingPointError):
    """Raised by the nan guard when an op produces non-finite values."""


_GRAD_ENABLED = [True]
_NAN_GUARD = [False]


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (evaluation passes)."""
    _GRAD_ENABLED.append(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.pop()


@contextlib.contextmanager
def nan_guard(enabled=True):
    """Check every op output for NaN/Inf and raise NumericsError naming the op."""
    _NAN_GUARD.append(enabled)
    try:
        yield
    finally:
        _NAN_GUARD.pop()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward_fn",
                 "_backward_done")

    def __init__(self, data, requires_grad=False, op="leaf", _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.op = op
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._backward_done = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Reverse-sweep from a scalar loss, accumulating into .grad fields."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar tensor, got shape {self.shape}")
        if self._backward_done:
            raise RuntimeError("backward already ran for this tensor; rebuild the graph first")
        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
        self._backward_done = True

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)


def _toposort(root):
    order, visited = [], set()
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
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad = t.grad + g


def _make(data, parents, op, backward_fn):
    if _NAN_GUARD[-1] and not np.all(np.isfinite(data)):
        raise NumericsError(f"non-finite values produced by op '{op}'")
    if _GRAD_ENABLED[-1] and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, op=op, _parents=tuple(parents),
                      _backward_fn=backward_fn)
    return Tensor(data, op=op)


def _unbroadcast(g, shape):
    """Sum a gradient down to the shape of the broadcast input."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_data(a, b, op):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None


# ---------------------------------------------------------------------------
# elementwise ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "add")
    data = a.data + b.data

    def bw(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _make(data, (a, b), "add", bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_data(a, b, "mul")
    data = a.data * b.data

    def bw(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(data, (a, b), "mul", bw)


def sigmoid(x):
    x = as_tensor(x)
    # stable in both tails
    data = np.where(x.data >= 0,
                    1.0 / (1.0 + np.exp(-np.abs(x.data))),
                    np.exp(-np.abs(x.data)) / (1.0 + np.exp(-np.abs(x.data))))

    def bw(g):
        _accum(x, g * data * (1.0 - data))

    return _make(data, (x,), "sigmoid", bw)


def tanh(x):
    x = as_tensor(x)
    data = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - data * data))

    return _make(data, (x,), "tanh", bw)


def relu(x):
    x = as_tensor(x)
    data = np.maximum(x.data, 0.0)

    def bw(g):
        _accum(x, g * (x.data > 0))

    return _make(data, (x,), "relu", bw)


def power(x, p):
    x = as_tensor(x)
    data = x.data ** p

    def bw(g):
        _accum(x, g * p * x.data ** (p - 1))

    return _make(data, (x,), f"power({p})", bw)


def log(x):
    x = as_tensor(x)
    data = np.log(x.data)

    def bw(g):
        _accum(x, g / x.data)

    return _make(data, (x,), "log", bw)


def maximum_const(x, c):
    """Elementwise max with a constant floor; gradient flows where x > c."""
    x = as_tensor(x)
    data = np.maximum(x.data, c)

    def bw(g):
        _accum(x, g * (x.data > c))

    return _make(data, (x,), "maximum_const", bw)


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _make(data, (a, b), "matmul", bw)


def transpose(x):
    x = as_tensor(x)

    def bw(g):
        _accum(x, g.T)

    return _make(x.data.T, (x,), "transpose", bw)


def softmax_rows(x):
    """Row-wise softmax with max-subtraction for overflow safety."""
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"softmax_rows expects a 2D tensor, got shape {x.shape}")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        dot = (g * data).sum(axis=1, keepdims=True)
        _accum(x, data * (g - dot))

    return _make(data, (x,), "softmax_rows", bw)


def layer_norm(x, gamma, beta, eps=1e-5):
    """Per-row normalization to zero mean / unit variance, then gamma*x + beta."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if x.ndim != 2:
        raise ShapeError(f"layer_norm expects a 2D tensor, got shape {x.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    std = np.sqrt(var + eps)
    xhat = xc / std
    data = gamma.data * xhat + beta.data

    def bw(g):
        _accum(gamma, (g * xhat).sum(axis=0))
        _accum(beta, g.sum(axis=0))
        dxhat = g * gamma.data
        dx = (dxhat - dxhat.mean(axis=1, keepdims=True)
              - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)) / std
        _accum(x, dx)

    return _make(data, (x, gamma, beta), "layer_norm", bw)


def conv1d_seq(x, kernel, bias):
    """1D convolution along the row (sequence) axis with zero padding.

    x: (N, d_in), kernel: (k, d_in, d_out) with k odd, bias: (d_out,).
    Output row i = sum_t x[i + t - k//2] @ kernel[t] + bias, zero outside range.
    """
    x, kernel, bias = as_tensor(x), as_tensor(kernel), as_tensor(bias)
    if kernel.ndim != 3:
        raise ShapeError(f"conv1d_seq kernel must be (k, d_in, d_out), got {kernel.shape}")
    k, d_in, d_out = kernel.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d_seq kernel size must be odd, got k={k}")
    if x.ndim != 2 or x.shape[1] != d_in:
        raise ShapeError(f"conv1d_seq: input {x.shape} incompatible with kernel {kernel.shape}")
    n = x.shape[0]
    pad = k // 2
    data = np.tile(bias.data, (n, 1))
    for t in range(k):
        s = t - pad
        if s >= 0:
            data[: n - s] += x.data[s:] @ kernel.data[t]
        else:
            data[-s:] += x.data[: n + s] @ kernel.data[t]

    def bw(g):
        _accum(bias, g.sum(axis=0))
        dk = np.zeros_like(kernel.data)
        dx = np.zeros_like(x.data)
        for t in range(k):
            s = t - pad
            if s >= 0:
                go = g[: n - s]
                dk[t] = x.data[s:].T @ go
                dx[s:] += go @ kernel.data[t].T
            else:
                go = g[-s:]
                dk[t] = x.data[: n + s].T @ go
                dx[: n + s] += go @ kernel.data[t].T
        _accum(kernel, dk)
        _accum(x, dx)

    return _make(data, (x, kernel, bias), "conv1d_seq", bw)


# ---------------------------------------------------------------------------
# shape ops

def concat(a, b, axis=0):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != b.ndim:
        raise ShapeError(f"concat: rank mismatch {a.shape} vs {b.shape}")
    for ax in range(a.ndim):
        if ax != axis and a.shape[ax] != b.shape[ax]:
            raise ShapeError(f"concat: non-concat dims differ, {a.shape} vs {b.shape} on axis {axis}")
    data = np.concatenate([a.data, b.data], axis=axis)
    split = a.shape[axis]

    def bw(g):
        ga, gb = np.split(g, [split], axis=axis)
        _accum(a, ga)
        _accum(b, gb)

    return _make(data, (a, b), "concat", bw)


def narrow(x, axis, start, stop):
    """Slice [start:stop) along one axis; backward zero-pads back."""
    x = as_tensor(x)
    idx = tuple(slice(start, stop) if ax == axis else slice(None) for ax in range(x.ndim))
    data = x.data[idx]

    def bw(g):
        full = np.zeros_like(x.data)
        full[idx] = g
        _accum(x, full)

    return _make(data, (x,), "narrow", bw)


def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            _accum(x, np.broadcast_to(g, x.data.shape))
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(ge, x.data.shape))

    return _make(data, (x,), "sum", bw)


def mean_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        count = x.data.shape[axis]
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / count)


def dropout(x, p, rng):
    """Inverted dropout; identity when p == 0. rng draws once per call."""
    if p <= 0.0:
        return x
    x = as_tensor(x)
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, Tensor(mask))


def zeros(shape):
    return Tensor(np.zeros(shape))


def eye(n):
    return Tensor(np.eye(n))


def scaled_dot_attention(q, k, v, d_k=None):
    """softmax(q k^T / sqrt(d_k)) v over row dimensions."""
    d = q.shape[1] if d_k is None else d_k
    scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    return matmul(softmax_rows(scores), v)
