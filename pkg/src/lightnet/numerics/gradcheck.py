"""Central-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from lightnet.numerics.tensor import Tape, Tensor


def _scalar(y: Tensor) -> float:
    if y.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued function, got shape {y.shape}")
    v = float(y.data.reshape(-1)[0])
    if not np.isfinite(v):
        raise FloatingPointError(f"function value is not finite: {v}")
    return v


def numerical_gradient(f: Callable[..., Tensor], xs: Sequence[Tensor], h: float = 1e-5) -> list[np.ndarray]:
    grads = []
    for i, x in enumerate(xs):
        g = np.zeros(x.shape, dtype=np.float64)
        base = x.data.copy()
        for j in range(base.size):
            bumped = []
            for step in (h, -h):
                arr = base.copy()
                arr.reshape(-1)[j] += step
                args = list(xs)
                args[i] = Tensor(arr, requires_grad=x.requires_grad)
                bumped.append(_scalar(f(*args)))
            g.reshape(-1)[j] = (bumped[0] - bumped[1]) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradient(f: Callable[..., Tensor], xs: Sequence[Tensor]) -> list[np.ndarray]:
    with Tape() as tape:
        tape.watch(*xs)
        y = f(*xs)
    _scalar(y)
    return [g.data for g in tape.gradient(y, xs)]


def grad_check(f: Callable[..., Tensor], x, h: float = 1e-5) -> float:
    """Max over coordinates of |analytic - central difference| / max(1, |analytic|).

    ``x`` is one tensor or a sequence of tensors; ``f`` takes them as
    positional arguments and returns a scalar tensor.
    """
    xs = [x] if isinstance(x, Tensor) else list(x)
    exact = analytic_gradient(f, xs)
    approx = numerical_gradient(f, xs, h)
    err = 0.0
    for a, n in zip(exact, approx):
        if a.size:
            err = max(err, float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a)))))
    return err
