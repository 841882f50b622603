"""Differentiable primitives over :class:`Tensor`.

Broadcasting follows the numpy rule: shapes are aligned at the trailing
axis, and an axis of extent 1 (or a missing leading axis) expands to match
the other operand. Anything else raises ``ValueError`` naming both shapes.
Plain numbers and numpy arrays are accepted wherever a tensor is and are
treated as constants.
"""

from __future__ import annotations

import numpy as np

from lightnet.numerics.tensor import Tensor, record


def const(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, const(b, a)
    b = const(b)
    return const(a, b), b


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (adjoint of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def broadcast_shape(a: tuple[int, ...], b: tuple[int, ...]) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ValueError(f"shapes {a} and {b} are not broadcast-compatible") from None


def _out(arr: np.ndarray) -> Tensor:
    return Tensor._wrap(arr)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    broadcast_shape(a.shape, b.shape)
    out = _out(a.data + b.data)

    def add_backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    record((a, b), (out,), add_backward)
    return out


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    broadcast_shape(a.shape, b.shape)
    out = _out(a.data - b.data)

    def sub_backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    record((a, b), (out,), sub_backward)
    return out


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    broadcast_shape(a.shape, b.shape)
    out = _out(a.data * b.data)

    def mul_backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    record((a, b), (out,), mul_backward)
    return out


def reciprocal(x) -> Tensor:
    x = const(x)
    r = 1.0 / x.data
    out = _out(r)

    def reciprocal_backward(g):
        return (-g * r * r,)

    record((x,), (out,), reciprocal_backward)
    return out


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    broadcast_shape(a.shape, b.shape)
    out = _out(a.data / b.data)

    def div_backward(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out.data, b.shape)

    record((a, b), (out,), div_backward)
    return out


def neg(x) -> Tensor:
    x = const(x)
    out = _out(-x.data)
    record((x,), (out,), lambda g: (-g,))
    return out


def exp(x) -> Tensor:
    x = const(x)
    out = _out(np.exp(x.data))

    def exp_backward(g):
        return (g * out.data,)

    record((x,), (out,), exp_backward)
    return out


def log(x) -> Tensor:
    x = const(x)
    out = _out(np.log(x.data))

    def log_backward(g):
        return (g / x.data,)

    record((x,), (out,), log_backward)
    return out


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows and gives sigmoid(0) == 0.5 exactly
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(x) -> Tensor:
    x = const(x)
    s = _sigmoid(x.data)
    out = _out(s)

    def sigmoid_backward(g):
        return (g * s * (1.0 - s),)

    record((x,), (out,), sigmoid_backward)
    return out


def swish(x) -> Tensor:
    """x * sigmoid(x)."""
    x = const(x)
    s = _sigmoid(x.data)
    out = _out(x.data * s)

    def swish_backward(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    record((x,), (out,), swish_backward)
    return out


def square(x) -> Tensor:
    x = const(x)
    out = _out(x.data * x.data)
    record((x,), (out,), lambda g: (2.0 * g * x.data,))
    return out


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "exp": exp,
    "sigmoid": sigmoid,
    "swish": swish,
    "reciprocal": reciprocal,
    "div": div,
    "neg": neg,
    "log": log,
    "square": square,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: ``elementwise("swish", x)``, ``elementwise("add", a, b)``."""
    try:
        fn = ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}; choose from {sorted(ELEMENTWISE)}") from None
    return fn(*args)


# ---------------------------------------------------------------------------
# linear algebra and reductions
# ---------------------------------------------------------------------------


def matmul(a, b, transpose_a: bool = False, transpose_b: bool = False) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast.

    ``transpose_a``/``transpose_b`` use the transposed operand without
    materialising it.
    """
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs at least 2-D operands, got {a.shape} @ {b.shape}")
    A = np.swapaxes(a.data, -1, -2) if transpose_a else a.data
    B = np.swapaxes(b.data, -1, -2) if transpose_b else b.data
    if A.shape[-1] != B.shape[-2]:
        ta, tb = ("^T" if transpose_a else ""), ("^T" if transpose_b else "")
        raise ValueError(f"matmul shape mismatch: {a.shape}{ta} @ {b.shape}{tb}")
    out = _out(A @ B)

    def matmul_backward(g):
        gA = g @ np.swapaxes(B, -1, -2)
        gB = np.swapaxes(A, -1, -2) @ g
        if transpose_a:
            gA = np.swapaxes(gA, -1, -2)
        if transpose_b:
            gB = np.swapaxes(gB, -1, -2)
        return unbroadcast(gA, a.shape), unbroadcast(gB, b.shape)

    record((a, b), (out,), matmul_backward)
    return out


def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = const(x)
    axes = _norm_axes(axis, x.ndim)
    out = _out(np.asarray(x.data.sum(axis=axes, keepdims=keepdims)))

    def sum_backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    record((x,), (out,), sum_backward)
    return out


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = const(x)
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axes, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = const(x)
    out = _out(x.data.reshape(shape))
    record((x,), (out,), lambda g: (g.reshape(x.shape),))
    return out


def transpose(x, axes=None) -> Tensor:
    x = const(x)
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    out = _out(np.transpose(x.data, axes))
    record((x,), (out,), lambda g: (np.transpose(g, inv),))
    return out


def swapaxes(x, a: int, b: int) -> Tensor:
    x = const(x)
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def moveaxis(x, src: int, dst: int) -> Tensor:
    x = const(x)
    axes = list(range(x.ndim))
    axes.insert(dst % x.ndim, axes.pop(src % x.ndim))
    return transpose(x, axes)


def _is_fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (np.ndarray, list)) for i in items)


def getitem(x, idx) -> Tensor:
    x = const(x)
    out = _out(np.asarray(x.data[idx]))
    fancy = _is_fancy(idx)

    def getitem_backward(g):
        z = np.zeros_like(x.data)
        if fancy:
            np.add.at(z, idx, g)
        else:
            z[idx] = g
        return (z,)

    record((x,), (out,), getitem_backward)
    return out


def concat(xs, axis: int = -1) -> Tensor:
    xs = [const(x) for x in xs]
    out = _out(np.concatenate([x.data for x in xs], axis=axis))
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def concat_backward(g):
        return tuple(np.split(g, splits, axis=axis))

    record(tuple(xs), (out,), concat_backward)
    return out


def split(x, size: int, axis: int = 0) -> list[Tensor]:
    """Consecutive pieces of ``size`` along ``axis`` (the last may be shorter).

    One tape node for all pieces, so the adjoint costs O(x.size) however
    many pieces are taken.
    """
    x = const(x)
    n = x.shape[axis]
    bounds = list(range(size, n, size))
    outs = [_out(p) for p in np.split(x.data, bounds, axis=axis)]

    def split_backward(*gs):
        return (np.concatenate(gs, axis=axis),)

    record((x,), tuple(outs), split_backward)
    return outs


def broadcast_to(x, shape) -> Tensor:
    x = const(x)
    out = _out(np.broadcast_to(x.data, shape).copy())
    record((x,), (out,), lambda g: (unbroadcast(g, x.shape),))
    return out


# ---------------------------------------------------------------------------
# normalisations and losses
# ---------------------------------------------------------------------------


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max-subtraction."""
    x = const(x)
    if not -x.ndim <= axis < x.ndim:
        raise ValueError(f"axis {axis} out of range for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)
    out = _out(p)

    def softmax_backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    record((x,), (out,), softmax_backward)
    return out


softmax_over_axis = softmax


def log_softmax(x, axis: int = -1) -> Tensor:
    x = const(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    lp = z - lse
    out = _out(lp)

    def log_softmax_backward(g):
        return (g - np.exp(lp) * g.sum(axis=axis, keepdims=True),)

    record((x,), (out,), log_softmax_backward)
    return out


def rms_norm(x, scale, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x**2, last axis) + eps) * scale."""
    x = const(x)
    scale = const(scale, x)
    if scale.shape[-1:] != x.shape[-1:]:
        raise ValueError(f"rms_norm scale shape {scale.shape} does not match last axis of {x.shape}")
    broadcast_shape(x.shape, scale.shape)
    r = np.sqrt(np.mean(x.data * x.data, axis=-1, keepdims=True) + eps)
    xh = x.data / r
    out = _out(xh * scale.data)

    def rms_norm_backward(g):
        gs = g * scale.data
        gx = (gs - xh * np.mean(gs * xh, axis=-1, keepdims=True)) / r
        return gx, unbroadcast(g * xh, scale.shape)

    record((x, scale), (out,), rms_norm_backward)
    return out


def cross_entropy(logits, targets) -> Tensor:
    """Mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``logits`` has shape ``[..., C]`` and ``targets`` the leading shape.
    """
    logits = const(logits)
    targets = np.asarray(targets)
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets shape {targets.shape} does not match logits {logits.shape}")
    c = logits.shape[-1]
    flat = logits.data.reshape(-1, c)
    t = targets.reshape(-1)
    z = flat - flat.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    lp = z - lse
    rows = np.arange(t.size)
    out = _out(np.asarray(-lp[rows, t].mean(), dtype=logits.dtype))

    def cross_entropy_backward(g):
        p = np.exp(lp)
        p[rows, t] -= 1.0
        return ((g * p / t.size).reshape(logits.shape),)

    record((logits,), (out,), cross_entropy_backward)
    return out
