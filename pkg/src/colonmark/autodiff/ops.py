"""Differentiable primitives.

Binary elementwise ops accept equal shapes or leading-axis broadcasting,
where the smaller operand's shape is a suffix of the larger one's
(``(B, T, D) + (D,)``). Nothing else broadcasts.
"""

from __future__ import annotations

import builtins
import math
from typing import Sequence

import numpy as np

from ..errors import ShapeMismatch
from .tensor import Tensor, as_tensor, record

LAYER_NORM_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def _broadcast_shape(a: tuple, b: tuple, op: str) -> tuple:
    if a == b:
        return a
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise ShapeMismatch(f"{op}: shapes {a} and {b} are not leading-axis broadcastable")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.reshape((-1,) + shape).sum(axis=0) if lead else g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.dtype.type(c)
    return record(x.data * c, (x,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    """``a @ b`` for ``a`` of shape (..., m, k) and ``b`` of shape (k, n) or (..., k, n).

    A batched ``b`` must carry exactly the same leading axes as ``a``.
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or (
            b.ndim > 2 and a.shape[:-2] != b.shape[:-2]):
        raise ShapeMismatch(f"matmul: shapes {a.shape} and {b.shape} are incompatible")

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.ndim == 2:
                k, n = b.shape
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return ga, gb

    return record(np.matmul(a.data, b.data), (a, b), bw)


def transpose(x, axes: Sequence[int] | None = None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatch(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def swap_last(x) -> Tensor:
    axes = list(range(as_tensor(x).ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeMismatch(f"reshape: cannot view shape {x.shape} as {tuple(shape)}") from None
    return record(out, (x,), lambda g: (g.reshape(x.shape),))


def concat(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeMismatch("concat: no inputs")
    nd = xs[0].ndim
    ax = axis % nd
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != nd or x.shape[:ax] + x.shape[ax + 1:] != ref[:ax] + ref[ax + 1:]:
            raise ShapeMismatch(f"concat: shapes {ref} and {x.shape} differ off axis {axis}")
    bounds = np.cumsum([0] + [x.shape[ax] for x in xs])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(xs)))

    return record(np.concatenate([x.data for x in xs], axis=ax), xs, bw)


def slice(x, index) -> Tensor:
    """Basic (non-fancy) indexing: ints, slices, Ellipsis."""
    x = as_tensor(x)
    items = index if isinstance(index, tuple) else (index,)
    for it in items:
        if not (isinstance(it, (int, np.integer, builtins.slice)) or it is Ellipsis):
            raise TypeError(f"slice: unsupported index element {it!r}")
    out = x.data[index]

    def bw(g):
        full = np.zeros_like(x.data)
        full[index] = g
        return (full,)

    return record(np.array(out), (x,), bw)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return record(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    if axis is None:
        n = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        n = int(np.prod([x.shape[a] for a in axes]))
    inv = x.dtype.type(1.0 / n)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * inv, x.shape).astype(x.dtype),)

    return record(np.asarray(x.data.mean(axis=axis, keepdims=keepdims), dtype=x.dtype), (x,), bw)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return record(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return record(np.log(x.data), (x,), lambda g: (g / x.data,))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record(out, (x,), bw)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return record(out, (x,), bw)


def gelu(x) -> Tensor:
    """GELU, tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    x = as_tensor(x)
    d = x.data
    c = d.dtype.type(_GELU_C)
    k = d.dtype.type(0.044715)
    half = d.dtype.type(0.5)
    t = np.tanh(c * (d + k * d * d * d))
    out = half * d * (1 + t)

    def bw(g):
        dt = (1 - t * t) * c * (1 + 3 * k * d * d)
        return (g * (half * (1 + t) + half * d * dt),)

    return record(out, (x,), bw)


def layer_norm(x, gain, bias, axis: int = -1, eps: float = LAYER_NORM_EPS) -> Tensor:
    """Normalize over one axis (default last), then apply per-feature gain and bias."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    ax = axis % x.ndim
    feat = (x.shape[ax],)
    if gain.shape != feat or bias.shape != feat:
        raise ShapeMismatch(f"layer_norm: gain {gain.shape} / bias {bias.shape} vs feature axis {feat}")
    shape = [1] * x.ndim
    shape[ax] = x.shape[ax]
    gv = gain.data.reshape(shape)
    bv = bias.data.reshape(shape)
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    xhat = xc * rstd
    out = xhat * gv + bv
    other = tuple(i for i in range(x.ndim) if i != ax)

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gv
            gx = rstd * (gh - gh.mean(axis=ax, keepdims=True)
                         - xhat * (gh * xhat).mean(axis=ax, keepdims=True))
        gg = (g * xhat).sum(axis=other) if gain.requires_grad else None
        gb = g.sum(axis=other) if bias.requires_grad else None
        return gx, gg, gb

    return record(out.astype(x.dtype, copy=False), (x, gain, bias), bw)


def dropout_mask_apply(x, mask: np.ndarray) -> Tensor:
    """Multiply by a fixed (already rescaled) mask; the mask carries no gradient."""
    return mul(x, Tensor(mask.astype(as_tensor(x).dtype, copy=False)))
