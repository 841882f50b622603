"""Sequential-scan primitives with hand-written adjoints.

Each op runs its time loop in numpy and records a single tape node, so a
length-n scan costs one node instead of n.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from lightnet.numerics.ops import _pair, broadcast_shape, const, unbroadcast
from lightnet.numerics.tensor import Tensor, is_recording, record

# multiply-add tallies, used to assert linear cost without timing
COUNTERS: Counter = Counter()


def linear_scan(a, x, axis: int = 0) -> Tensor:
    """y_t = a_t * y_{t-1} + x_t along ``axis`` with y_0 = 0.

    ``a`` broadcasts against ``x`` (an extent-1 time axis means a constant
    coefficient). The first coefficient never reaches the output.
    """
    x = const(x)
    a = const(a, x)
    if broadcast_shape(a.shape, x.shape) != x.shape:
        raise ValueError(f"coefficients {a.shape} do not broadcast to inputs {x.shape}")
    A = np.moveaxis(np.broadcast_to(a.data, x.shape), axis, 0)
    X = np.moveaxis(x.data, axis, 0)
    moved = X.shape
    n = moved[0]
    # rows of [n, rest] so every step writes into an array, even for 1-D input
    A, X = A.reshape(n, -1), X.reshape(n, -1)
    Y = np.empty(X.shape, dtype=np.result_type(A, X))
    if n:
        Y[0] = X[0]
    for t in range(1, n):
        np.multiply(A[t], Y[t - 1], out=Y[t])
        Y[t] += X[t]
    COUNTERS["linear_scan_mac"] += X.size
    out = Tensor._wrap(np.moveaxis(Y.reshape(moved), 0, axis))

    def linear_scan_backward(g):
        G = np.moveaxis(g, axis, 0).reshape(n, -1)
        GX = np.empty_like(G)
        GX[n - 1] = G[n - 1]
        for t in range(n - 2, -1, -1):
            GX[t] = G[t] + A[t + 1] * GX[t + 1]
        GA = np.zeros_like(GX)
        GA[1:] = GX[1:] * Y[:-1]
        back = (np.moveaxis(GA.reshape(moved), 0, axis), np.moveaxis(GX.reshape(moved), 0, axis))
        return unbroadcast(back[0], a.shape), back[1]

    record((a, x), (out,), linear_scan_backward)
    return out


def state_scan(q, a, b, v, return_state: bool = False):
    """Matrix-state recurrence over the second-to-last (time) axis.

        S_t = diag(a_t) S_{t-1} + b_t v_t^T,   S_0 = 0
        o_t = S_t^T q_t

    ``q`` and ``b`` are ``[..., n, dk]``, ``v`` is ``[..., n, dv]`` and ``a``
    broadcasts to ``[..., n, dk]`` (a ``[n, 1]`` column gives one scalar
    decay per step). Returns ``o`` of shape ``[..., n, dv]``, plus the final
    state ``S_n`` as a constant tensor when ``return_state`` is set.
    """
    q, b = _pair(q, b)
    v = const(v, q)
    a = const(a, q)
    if q.shape != b.shape:
        raise ValueError(f"query {q.shape} and key {b.shape} shapes differ")
    if q.shape[:-1] != v.shape[:-1]:
        raise ValueError(f"query {q.shape} and value {v.shape} disagree on leading axes")
    if broadcast_shape(a.shape, q.shape) != q.shape:
        raise ValueError(f"decay {a.shape} does not broadcast to {q.shape}")
    A = np.broadcast_to(a.data, q.shape)
    Q, B, V = q.data, b.data, v.data
    n, dk, dv = q.shape[-2], q.shape[-1], v.shape[-1]
    lead = q.shape[:-2]
    dtype = np.result_type(Q, V, A)
    keep = is_recording()

    S = np.zeros(lead + (dk, dv), dtype=dtype)
    states = np.empty((n,) + lead + (dk, dv), dtype=dtype) if keep else None
    O = np.empty(lead + (n, dv), dtype=dtype)
    for t in range(n):
        S = A[..., t, :, None] * S + B[..., t, :, None] * V[..., t, None, :]
        O[..., t, :] = (Q[..., t, None, :] @ S)[..., 0, :]
        if keep:
            states[t] = S
    COUNTERS["state_scan_mac"] += n * int(np.prod(lead, dtype=np.int64)) * dk * dv
    out = Tensor._wrap(O)

    def state_scan_backward(g):
        gq = np.empty_like(Q, dtype=dtype)
        gb = np.empty_like(B, dtype=dtype)
        gv = np.empty_like(V, dtype=dtype)
        ga = np.zeros(q.shape, dtype=dtype)
        carry = np.zeros(lead + (dk, dv), dtype=dtype)
        for t in range(n - 1, -1, -1):
            St = states[t]
            gt = g[..., t, :]
            gq[..., t, :] = (St @ gt[..., :, None])[..., 0]
            Gs = carry + Q[..., t, :, None] * gt[..., None, :]
            gb[..., t, :] = (Gs @ V[..., t, :, None])[..., 0]
            gv[..., t, :] = (B[..., t, None, :] @ Gs)[..., 0, :]
            if t > 0:
                ga[..., t, :] = (Gs * states[t - 1]).sum(axis=-1)
            carry = A[..., t, :, None] * Gs
        return gq, unbroadcast(ga, a.shape), gb, gv

    record((q, a, b, v), (out,), state_scan_backward)
    if return_state:
        return out, Tensor._wrap(S)
    return out


def running_softmax(k: np.ndarray, axis: int = -2) -> tuple[np.ndarray, np.ndarray]:
    """Prefix-softmax weights and carry-over factors along ``axis``.

    Returns ``(w, keep)`` with ``w_t = exp(k_t) / s_t`` and
    ``keep_t = s_{t-1} / s_t`` where ``s_t`` is the running sum of
    ``exp(k)``. The sum is held as (running max, rescaled sum) so it never
    overflows. ``keep_1 = 0`` and ``w_t + keep_t = 1`` up to rounding.
    """
    K = np.moveaxis(np.asarray(k), axis, 0)
    n = K.shape[0]
    w = np.empty_like(K, dtype=np.result_type(K, np.float32))
    keep = np.empty_like(w)
    if n == 0:
        return np.moveaxis(w, 0, axis), np.moveaxis(keep, 0, axis)
    m = K[0].copy()
    s = np.ones_like(m, dtype=w.dtype)
    w[0] = 1.0
    keep[0] = 0.0
    for t in range(1, n):
        m_new = np.maximum(m, K[t])
        carried = s * np.exp(m - m_new)
        e = np.exp(K[t] - m_new)
        s = carried + e
        w[t] = e / s
        keep[t] = carried / s
        m = m_new
    return np.moveaxis(w, 0, axis), np.moveaxis(keep, 0, axis)


def prefix_softmax(k, axis: int = -2) -> tuple[Tensor, Tensor]:
    """Differentiable :func:`running_softmax`; returns tensors ``(w, keep)``."""
    k = const(k)
    w, keep = running_softmax(k.data, axis)
    w_out, keep_out = Tensor._wrap(w), Tensor._wrap(keep)

    def prefix_softmax_backward(g_w, g_keep):
        # keep = 1 - w, so both adjoints fold into one
        W = np.moveaxis(w, axis, 0)
        P = np.moveaxis(keep, axis, 0)
        c = (np.moveaxis(g_w, axis, 0) - np.moveaxis(g_keep, axis, 0)) * W
        r = np.empty_like(c)
        n = c.shape[0]
        r[n - 1] = c[n - 1]
        for t in range(n - 2, -1, -1):
            r[t] = c[t] + P[t + 1] * r[t + 1]
        return (np.moveaxis(c - W * r, 0, axis),)

    record((k,), (w_out, keep_out), prefix_softmax_backward)
    return w_out, keep_out


def decay_products(lam: np.ndarray) -> np.ndarray:
    """Lower-triangular D with D[t, s] = prod(lam[s+1 .. t]) and D[t, t] = 1.

    Built from running products, never by division, so zeros are fine.
    """
    lam = np.asarray(lam)
    n = lam.shape[0]
    D = np.zeros((n, n), dtype=np.result_type(lam, np.float32))
    for t in range(n):
        if t:
            D[t, :t] = D[t - 1, :t] * lam[t]
        D[t, t] = 1.0
    return D


def decay_matrix(lam) -> Tensor:
    """Differentiable :func:`decay_products` of a length-n decay vector."""
    lam = const(lam)
    if lam.ndim != 1:
        raise ValueError(f"decay vector must be 1-D, got shape {lam.shape}")
    D = decay_products(lam.data)
    out = Tensor._wrap(D)

    def decay_matrix_backward(g):
        # d D[t,s] / d lam[r] = D[t, r] * D[r-1, s] for s < r <= t
        shifted = np.zeros_like(D)
        shifted[1:] = D[:-1]
        M = g @ shifted.T
        return ((D * M).sum(axis=0),)

    record((lam,), (out,), decay_matrix_backward)
    return out
