"""Dense float32 tensors with reverse-mode differentiation.

Every op builds its output eagerly and, when any input requires a gradient,
records a closure that maps the output gradient to input gradients. Only
bias-style broadcasting is supported: an operand may be a 1-D vector matching
the trailing axis of the other. ``matmul`` additionally broadcasts leading
batch axes the way :func:`numpy.matmul` does.

Set ``MASKCLR_DEBUG=1`` to check every op output for NaN/Inf.
"""
import os

import numpy as np

from maskclr import kernels
from maskclr.errors import AxisError, ContractError, ShapeError

DTYPE = np.float32
DEBUG = os.environ.get("MASKCLR_DEBUG", "0") not in ("", "0")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.ascontiguousarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self.op = "leaf"
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name=None):
    return Tensor(data, requires_grad=True, name=name)


def _make(data, parents, backward_fn, op):
    out = Tensor(data)
    out.op = op
    if DEBUG and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite output from {op}")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _check_axis(axis, ndim):
    if not -ndim <= axis < ndim:
        raise AxisError(f"axis {axis} out of range for rank {ndim}")
    return axis % ndim


# ------------------------------------------------------------------ graph walk

def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every leaf that requires it."""
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            pg = np.asarray(pg, dtype=DTYPE)
            if id(parent) in grads:
                grads[id(parent)] = grads[id(parent)] + pg
            else:
                grads[id(parent)] = pg


# ------------------------------------------------------------------ helpers

def _bias_compatible(a, b):
    return a.shape == b.shape or (b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0])


def _reduce_to(g, shape):
    if g.shape == shape:
        return g
    return g.reshape(-1, shape[0]).sum(axis=0)


# ------------------------------------------------------------------ elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if not _bias_compatible(a, b):
        if _bias_compatible(b, a):
            a, b = b, a
        else:
            raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    sb = b.shape

    def bw(g):
        return g, _reduce_to(g, sb)

    return _make(a.data + b.data, (a, b), bw, "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if not _bias_compatible(a, b):
        if _bias_compatible(b, a):
            a, b = b, a
        else:
            raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    sb = b.shape
    ad, bd = a.data, b.data

    def bw(g):
        return g * bd, _reduce_to(g * ad, sb)

    return _make(ad * bd, (a, b), bw, "mul")


def scale(a, c):
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        return (g * c,)

    return _make(a.data * DTYPE(c), (a,), bw, "scale")


def relu(a):
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return _make(a.data * mask, (a,), bw, "relu")


def gelu(a):
    x = a.data

    def bw(g):
        return (kernels.gelu_backward(g, x),)

    return _make(kernels.gelu_forward(x), (a,), bw, "gelu")


def sigmoid(a):
    y = (1.0 / (1.0 + np.exp(-a.data.astype(np.float64)))).astype(DTYPE)

    def bw(g):
        return (g * y * (1.0 - y),)

    return _make(y, (a,), bw, "sigmoid")


def dropout(a, p, rng, training=True):
    """Inverted dropout; identity when ``training`` is false or ``p == 0``."""
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0,1), got {p}")
    keep = (rng.random(a.shape) >= p).astype(DTYPE) / DTYPE(1.0 - p)

    def bw(g):
        return (g * keep,)

    return _make(a.data * keep, (a,), bw, "dropout")


# ------------------------------------------------------------------ linear algebra

def _swap(x):
    return np.swapaxes(x, -1, -2)


def _sum_leading(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError as exc:
        raise ShapeError(f"matmul: {exc}") from None
    ad, bd = a.data, b.data

    def bw(g):
        ga = _sum_leading(np.matmul(g, _swap(bd)), ad.shape) if a.requires_grad else None
        gb = _sum_leading(np.matmul(_swap(ad), g), bd.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw, "matmul")


def transpose(a, axes=None):
    """Permute axes; default swaps the last two."""
    if axes is None:
        if a.ndim < 2:
            raise AxisError("transpose needs rank >= 2")
        axes = list(range(a.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
    axes = [_check_axis(ax, a.ndim) for ax in axes]
    if sorted(axes) != list(range(a.ndim)):
        raise AxisError(f"invalid permutation {axes}")
    inv = np.argsort(axes)

    def bw(g):
        return (np.transpose(g, inv),)

    return _make(np.transpose(a.data, axes), (a,), bw, "transpose")


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: {exc}") from None

    def bw(g):
        return (g.reshape(old),)

    return _make(out, (a,), bw, "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    axis = _check_axis(axis, tensors[0].ndim)
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(tensors), bw, "concat")


def gather_rows(a, index):
    """Select along axis 0 with repeats allowed; backward scatter-adds."""
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < -a.shape[0] or index.max() >= a.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for {a.shape[0]} rows")
    shape = a.shape

    def bw(g):
        out = np.zeros(shape, dtype=DTYPE)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw, "gather_rows")


# ------------------------------------------------------------------ reductions

def sum_all(a):
    shape = a.shape

    def bw(g):
        return (np.broadcast_to(g, shape).astype(DTYPE),)

    return _make(np.asarray(a.data.sum(dtype=np.float64), dtype=DTYPE), (a,), bw, "sum")


def mean(a, axis=None):
    if axis is None:
        n = a.size
        shape = a.shape

        def bw_all(g):
            return (np.full(shape, g / n, dtype=DTYPE),)

        return _make(np.asarray(a.data.mean(dtype=np.float64), dtype=DTYPE), (a,), bw_all, "mean")
    axis = _check_axis(axis, a.ndim)
    n = a.shape[axis]

    def bw(g):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _make(a.data.mean(axis=axis), (a,), bw, "mean")


# ------------------------------------------------------------------ normalisers

def softmax(a, axis=-1):
    axis = _check_axis(axis, a.ndim)
    moved = np.moveaxis(a.data, axis, -1)
    shp = moved.shape
    y2 = kernels.softmax_forward(np.ascontiguousarray(moved.reshape(-1, shp[-1])))

    def bw(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, axis, -1).reshape(-1, shp[-1]))
        return (np.moveaxis(kernels.softmax_backward(g2, y2).reshape(shp), -1, axis),)

    return _make(np.moveaxis(y2.reshape(shp), -1, axis), (a,), bw, "softmax")


def layer_norm(a, gamma, beta, eps=1e-5):
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: scale/shift must have shape ({d},)")
    shp = a.shape
    y, xhat, rstd = kernels.layer_norm_forward(
        np.ascontiguousarray(a.data.reshape(-1, d)), gamma.data, beta.data, eps)

    def bw(g):
        dx, dg, db = kernels.layer_norm_backward(
            np.ascontiguousarray(g.reshape(-1, d)), xhat, rstd, gamma.data)
        return dx.reshape(shp), dg, db

    return _make(y.reshape(shp), (a, gamma, beta), bw, "layer_norm")


def l2_normalize(a, axis=-1, eps=1e-12):
    """Unit-norm slices along ``axis``; zero slices map to zero with zero gradient."""
    axis = _check_axis(axis, a.ndim)
    x = a.data
    norm = np.sqrt(np.sum(x.astype(np.float64) ** 2, axis=axis, keepdims=True))
    nonzero = norm > eps
    safe = np.where(nonzero, norm, 1.0)
    y = np.where(nonzero, x / safe, 0.0).astype(DTYPE)

    def bw(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (np.where(nonzero, (g - y * dot) / safe, 0.0),)

    return _make(y, (a,), bw, "l2_normalize")


def masked_logsumexp(a, mask, axis=-1):
    """log(sum(exp(a))) over entries where ``mask`` is true; empty rows give -inf."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"mask shape {mask.shape} != {a.shape}")
    axis = _check_axis(axis, a.ndim)
    x = np.where(mask, a.data.astype(np.float64), -np.inf)
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.where(mask, np.exp(x - m), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = (np.log(s) + m).squeeze(axis)
    w = np.where(s > 0, e / np.where(s > 0, s, 1.0), 0.0).astype(DTYPE)

    def bw(g):
        return (np.expand_dims(g, axis) * w,)

    return _make(out.astype(DTYPE), (a,), bw, "masked_logsumexp")


# ------------------------------------------------------------------ losses

def cross_entropy_logits(logits, targets):
    """Mean categorical cross-entropy; ``targets`` are integer class ids."""
    if logits.ndim != 2:
        raise ShapeError("cross_entropy_logits expects (N, C) logits")
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (logits.shape[0],):
        raise ShapeError(f"targets shape {targets.shape} != ({logits.shape[0]},)")
    x = logits.data.astype(np.float64)
    m = x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(x - m).sum(axis=1, keepdims=True)) + m
    n = x.shape[0]
    loss = float(np.mean(lse[:, 0] - x[np.arange(n), targets]))
    p = np.exp(x - lse)

    def bw(g):
        d = p.copy()
        d[np.arange(n), targets] -= 1.0
        return ((g * d / n).astype(DTYPE),)

    return _make(np.asarray(loss, dtype=DTYPE), (logits,), bw, "cross_entropy")


def binary_cross_entropy_logits(logits, targets):
    """Mean independent binary cross-entropy over every entry."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ShapeError(f"targets shape {targets.shape} != {logits.shape}")
    x = logits.data.astype(np.float64)
    loss = np.mean(np.maximum(x, 0) - x * targets + np.log1p(np.exp(-np.abs(x))))
    p = 1.0 / (1.0 + np.exp(-x))
    n = x.size

    def bw(g):
        return ((g * (p - targets) / n).astype(DTYPE),)

    return _make(np.asarray(loss, dtype=DTYPE), (logits,), bw, "bce")


def mse(pred, target):
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target.data
    n = diff.size

    def bw(g):
        d = (2.0 * g * diff / n).astype(DTYPE)
        return d, -d

    return _make(np.asarray(np.mean(diff ** 2), dtype=DTYPE), (pred, target), bw, "mse")
