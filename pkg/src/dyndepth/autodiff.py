"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation tape is rebuilt on every forward pass: each operation
returns a fresh ``Tensor`` holding references to its parent tensors and a
closure that pushes the output adjoint back to them.  ``backward()``
replays those closures in reverse topological order, so adjoints sum
wherever a tensor fans out into several consumers.

Everything is computed in 64-bit floats so the models stay deterministic
and gradient checks need no per-op tolerance tuning.  Graph recording can
be switched off with :func:`no_grad` for inference; the flag lives in a
``ContextVar`` so concurrent evaluations each own their workspace.
"""

from __future__ import annotations

import contextlib
import math
from contextvars import ContextVar

import numpy as np

_GRAD_ENABLED: ContextVar[bool] = ContextVar("dyndepth_grad_enabled", default=True)

# Probabilities below this are clamped before log() in cross_entropy.
PROB_FLOOR = 1e-12

# sigmoid outputs are clamped into the open interval (0, 1): halting values
# must never reach the endpoints or the remaining-probability product could
# freeze at exactly 0 or 1.
_SIGMOID_LO = 1e-300
_SIGMOID_HI = 1.0 - 1e-16

_GELU_K0 = math.sqrt(2.0 / math.pi)
_GELU_K1 = 0.044715


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference mode)."""
    token = _GRAD_ENABLED.set(False)
    try:
        yield
    finally:
        _GRAD_ENABLED.reset(token)


def grad_enabled() -> bool:
    return _GRAD_ENABLED.get()


class Tensor:
    """A dense nd-array plus the bookkeeping needed for backpropagation.

    ``data`` is always float64 and row-major.  ``grad`` stays ``None`` until
    a backward pass reaches the tensor; leaf gradients then accumulate
    across backward calls until the caller resets them (this is what lets a
    training step sum per-example adjoints over a batch).
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop", "_backward_done")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backprop = None
        self._backward_done = False

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing --------------------------------------------------------

    def backward(self) -> None:
        """Populate ``grad`` on every tensor this scalar depends on.

        The tape (parent links recorded during the forward pass) is walked
        in reverse topological order.  A second call on the same output is
        rejected: the graph is single-shot and must be rebuilt by a fresh
        forward pass.
        """
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar loss, got shape {self.data.shape}")
        if self._backward_done:
            raise RuntimeError("backward() already ran for this tensor; rebuild the graph first")
        if self._backprop is None and not self.requires_grad:
            raise RuntimeError("backward() on a tensor that is not on the tape")
        self._backward_done = True

        topo = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backprop is not None:
                node._backprop()

    # -- operator sugar --------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)


def as_tensor(x) -> Tensor:
    """Lift arrays and scalars into constant (non-differentiable) tensors."""
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def _toposort(root: Tensor):
    # Iterative DFS: graphs from long unrolled models overflow the
    # recursion limit otherwise.
    topo = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return topo


def _make(data: np.ndarray, parents, backprop) -> Tensor:
    """Wrap an op result, recording it on the tape when tracking is on."""
    out = Tensor(data)
    if _GRAD_ENABLED.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backprop = backprop
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum an adjoint back down to the shape the operand had before broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- arithmetic primitives -----------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def backprop():
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(out.grad, b.data.shape))

    out = _make(out_data, (a, b), backprop)
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data - b.data

    def backprop():
        _accum(a, _unbroadcast(out.grad, a.data.shape))
        _accum(b, _unbroadcast(-out.grad, b.data.shape))

    out = _make(out_data, (a, b), backprop)
    return out


def mul(a, b) -> Tensor:
    """Elementwise product; also covers scalar multiplication via lifting."""
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def backprop():
        _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
        _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))

    out = _make(out_data, (a, b), backprop)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul needs 2-D operands, got {a.data.shape} and {b.data.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def backprop():
        _accum(a, out.grad @ b.data.T)
        _accum(b, a.data.T @ out.grad)

    out = _make(out_data, (a, b), backprop)
    return out


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"transpose needs a 2-D tensor, got shape {a.data.shape}")
    out_data = np.ascontiguousarray(a.data.T)

    def backprop():
        _accum(a, out.grad.T)

    out = _make(out_data, (a,), backprop)
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.reshape(shape).copy()

    def backprop():
        _accum(a, out.grad.reshape(a.data.shape))

    out = _make(out_data, (a,), backprop)
    return out


def index(a, idx) -> Tensor:
    """Basic (slice/integer) indexing; adjoints scatter back into place."""
    a = as_tensor(a)
    out_data = np.array(a.data[idx], dtype=np.float64)

    def backprop():
        buf = np.zeros_like(a.data)
        buf[idx] += out.grad
        _accum(a, buf)

    out = _make(out_data, (a,), backprop)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backprop():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * out.grad.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, out.grad[tuple(sl)])

    out = _make(out_data, tuple(tensors), backprop)
    return out


def sum_(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.sum(axis=axis)

    def backprop():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    out = _make(out_data, (a,), backprop)
    return out


def mean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    out_data = a.data.mean(axis=axis)
    count = a.data.size if axis is None else a.data.shape[axis]

    def backprop():
        g = out.grad
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / count, a.data.shape).copy())

    out = _make(out_data, (a,), backprop)
    return out


# -- nonlinearities --------------------------------------------------------------


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out_data = np.empty_like(x)
    pos = x >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_data[~pos] = ex / (1.0 + ex)
    np.clip(out_data, _SIGMOID_LO, _SIGMOID_HI, out=out_data)

    def backprop():
        _accum(a, out.grad * out_data * (1.0 - out_data))

    out = _make(out_data, (a,), backprop)
    return out


def gelu(a) -> Tensor:
    """tanh-approximation GELU (the variant used throughout this package)."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_K0 * (x + _GELU_K1 * x**3)
    t = np.tanh(inner)
    out_data = 0.5 * x * (1.0 + t)

    def backprop():
        d_inner = _GELU_K0 * (1.0 + 3.0 * _GELU_K1 * x**2)
        local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * d_inner
        _accum(a, out.grad * local)

    out = _make(out_data, (a,), backprop)
    return out


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along ``axis`` (max-subtraction)."""
    a = as_tensor(a)
    if a.data.shape[axis] < 1:
        raise ValueError("softmax needs a non-empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def backprop():
        g = out.grad
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - dot))

    out = _make(out_data, (a,), backprop)
    return out


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize each last-axis slice to zero mean / unit variance, then affine."""
    if eps <= 0:
        raise ValueError(f"layer_norm eps must be positive, got {eps}")
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered**2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = xhat * gain.data + bias.data

    def backprop():
        g = out.grad
        lead = tuple(range(g.ndim - 1))
        _accum(bias, g.sum(axis=lead) if lead else g)
        _accum(gain, (g * xhat).sum(axis=lead) if lead else g * xhat)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        _accum(x, inv * (dxhat - m1 - xhat * m2))

    out = _make(out_data, (x, gain, bias), backprop)
    return out


def embedding(table, ids) -> Tensor:
    """Row lookup ``table[ids]``; adjoints scatter-add into the table."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise IndexError(f"embedding id out of range for table with {table.data.shape[0]} rows")
    out_data = table.data[ids]

    def backprop():
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids, out.grad)
        _accum(table, buf)

    out = _make(out_data, (table,), backprop)
    return out


def cross_entropy(probs, labels) -> Tensor:
    """Mean negative log-probability of the labelled class.

    ``probs`` rows must already be probability vectors; they are clamped
    below at ``PROB_FLOOR`` before the log so a hard zero cannot produce
    -inf.  Gradients vanish for entries sitting on the clamp.
    """
    probs = as_tensor(probs)
    if probs.data.ndim != 2:
        raise ValueError(f"cross_entropy expects [batch, classes] probs, got shape {probs.data.shape}")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = probs.data.shape
    if labels.shape[0] != n:
        raise ValueError(f"cross_entropy got {n} rows but {labels.shape[0]} labels")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"label out of range [0, {c})")
    picked = probs.data[np.arange(n), labels]
    clamped = np.maximum(picked, PROB_FLOOR)
    out_data = np.float64(-np.log(clamped).mean())

    def backprop():
        buf = np.zeros_like(probs.data)
        live = picked > PROB_FLOOR
        rows = np.arange(n)[live]
        buf[rows, labels[live]] = -out.grad / (n * clamped[live])
        _accum(probs, buf)

    out = _make(np.asarray(out_data), (probs,), backprop)
    return out
