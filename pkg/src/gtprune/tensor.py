"""Dense float64 tensors with reverse-mode automatic differentiation.

Only the operations the graph-transformer stack needs are provided. Every
op records its parents and a backward closure; :meth:`Tensor.backward`
walks the trace in reverse topological order and accumulates gradients
into every node that participates, including intermediates, so callers
can read ``.grad`` off any recorded activation (head outputs, effective
weights, ...).
"""

from __future__ import annotations

import contextlib
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

DTYPE = np.float64
MASK_VALUE = -1e9
# additive-mask entries at or below this count as masked
_MASKED_BELOW = -1e8

_grad_enabled = True


class ShapeError(ValueError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable trace recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = ""):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() needs a scalar loss, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _topological_order(root: Tensor) -> list[Tensor]:
    # iterative DFS; parents visited in recorded order for deterministic traces
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], op: str, backward) -> Tensor:
    tracked = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=tracked)
    if tracked:
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accum(-g)

    return _make(-a.data, (a,), "neg", backward)


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", backward)


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def backward(g):
        a._accum(g * pos)

    return _make(np.where(pos, a.data, 0.0), (a,), "relu", backward)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        a._accum(g * (cdf + x * pdf))

    return _make(x * cdf, (a,), "gelu", backward)


def straight_through(hard: np.ndarray, soft: Tensor) -> Tensor:
    """Forward value ``hard``; gradient passed unchanged to ``soft``."""
    hard = np.asarray(hard, dtype=DTYPE)
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through: hard {hard.shape} vs soft {soft.shape}")

    def backward(g):
        soft._accum(g)

    return _make(hard.copy(), (soft,), "straight_through", backward)


# ---------------------------------------------------------------- shape ops


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def backward(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _make(a.data @ b.data, (a, b), "matmul", backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    def backward(g):
        a._accum(g.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), "reshape", backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        a._accum(np.transpose(g, inverse))

    return _make(np.transpose(a.data, axes), (a,), "transpose", backward)


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            if t.requires_grad:
                t._accum(piece)

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, "concat", backward)


def gather_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """Pick rows along axis -2: ``out[..., i, :] = a[..., index[..., i], :]``.

    ``a`` is ``(n, d)`` with ``index`` of shape ``(k,)``, or batched
    ``(B, n, d)`` with ``index`` of shape ``(B, k)``.
    """
    index = np.asarray(index, dtype=np.intp)
    if a.ndim == 2:
        if index.ndim != 1:
            raise ShapeError(f"gather_rows: index {index.shape} for input {a.shape}")
        out = a.data[index]
    elif a.ndim == 3:
        if index.ndim != 2 or index.shape[0] != a.shape[0]:
            raise ShapeError(f"gather_rows: index {index.shape} for input {a.shape}")
        out = np.take_along_axis(a.data, index[:, :, None], axis=1)
    else:
        raise ShapeError(f"gather_rows: unsupported input {a.shape}")
    if index.size and (index.min() < 0 or index.max() >= a.shape[-2]):
        raise IndexError(f"gather_rows: index out of range for {a.shape[-2]} rows")

    def backward(g):
        buf = np.zeros_like(a.data)
        if a.ndim == 2:
            np.add.at(buf, index, g)
        else:
            batch = np.arange(a.shape[0])[:, None]
            np.add.at(buf, (batch, index), g)
        a._accum(buf)

    return _make(out, (a,), "gather_rows", backward)


# ---------------------------------------------------------------- reductions


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), "sum", backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------- fused ops


def softmax_rows(x: Tensor, additive_mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis with an optional 0 / -1e9 additive mask.

    Masked positions get exactly zero weight. A row with no unmasked
    position raises ``ValueError``.
    """
    z = x.data
    if additive_mask is not None:
        additive_mask = np.asarray(additive_mask, dtype=DTYPE)
        open_ = np.broadcast_to(additive_mask > _MASKED_BELOW, np.broadcast_shapes(z.shape, additive_mask.shape))
        if not open_.any(axis=-1).all():
            raise ValueError("softmax_rows: a row has every position masked")
        z = z + additive_mask
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    if additive_mask is not None:
        e = np.where(open_, e, 0.0)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        x._accum(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _make(y, (x,), "softmax", backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ValueError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    d = x.shape[-1]

    def backward(g):
        if gain.requires_grad:
            gain._accum(_unbroadcast(g * xhat, gain.shape))
        if bias.requires_grad:
            bias._accum(_unbroadcast(g, bias.shape))
        if x.requires_grad:
            gh = g * gain.data
            gx = inv / d * (d * gh - gh.sum(axis=-1, keepdims=True) - xhat * (gh * xhat).sum(axis=-1, keepdims=True))
            x._accum(gx)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), "layer_norm", backward)


def cross_entropy(logits: Tensor, labels: np.ndarray, reduction: str = "mean") -> Tensor:
    """Softmax cross-entropy for ``(B, C)`` logits and integer labels."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    rows = np.arange(len(labels))
    losses = -logp[rows, labels]
    if reduction == "mean":
        value, scale = losses.mean(), 1.0 / len(labels)
    elif reduction == "sum":
        value, scale = losses.sum(), 1.0
    else:
        raise ValueError(f"unknown reduction {reduction!r}")

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1.0
        logits._accum(p * (g * scale))

    return _make(np.asarray(value), (logits,), "cross_entropy", backward)
