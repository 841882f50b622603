"""Causal decay scan, its dense oracle, and the non-causal 1-scan / 2-scan forms.

All functions take ``[n, d]`` tensors (row t is position t) and are
differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lightnet.numerics import Tensor, decay_matrix, ops, state_scan
from lightnet.numerics.ops import const

ORACLE_MAX_N = 4096


@dataclass(frozen=True)
class AttentionInputs:
    q: Tensor
    k: Tensor
    v: Tensor
    lam: Tensor

    def __post_init__(self):
        q, k, v = (const(t) for t in (self.q, self.k, self.v))
        lam = const(self.lam, q)
        n = q.shape[0]
        if q.ndim != 2 or q.shape != k.shape:
            raise ValueError(f"q {q.shape} and k {k.shape} must be matching [n, d] matrices")
        if v.ndim != 2 or v.shape[0] != n:
            raise ValueError(f"v {v.shape} must have {n} rows")
        if lam.shape != (n,):
            raise ValueError(f"decay must have shape ({n},), got {lam.shape}")
        if np.any(lam.data < 0) or np.any(lam.data > 1):
            raise ValueError("decay rates must lie in [0, 1]")
        for name, val in zip("qkv", (q, k, v)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "lam", lam)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    def reversed(self) -> "AttentionInputs":
        flip = slice(None, None, -1)
        return AttentionInputs(self.q[flip], self.k[flip], self.v[flip], self.lam[flip])


def causal_decay_scan(inp: AttentionInputs) -> Tensor:
    """kv_t = lam_t kv_{t-1} + k_t v_t^T, o_t = kv_t^T q_t, one step at a time."""
    return state_scan(inp.q, inp.lam.reshape(inp.n, 1), inp.k, inp.v)


def masked_attention_oracle(inp: AttentionInputs) -> Tensor:
    """Dense O(n^2) evaluation: o_t = sum_{s<=t} prod(lam_{s+1..t}) (q_t . k_s) v_s."""
    if inp.n > ORACLE_MAX_N:
        raise ValueError(f"oracle limited to n <= {ORACLE_MAX_N}, got {inp.n}")
    scores = ops.matmul(inp.q, inp.k, transpose_b=True)
    return (scores * decay_matrix(inp.lam)) @ inp.v


def chunked_causal_scan(inp: AttentionInputs, chunk: int) -> Tensor:
    """Blockwise causal scan: dense attention inside each block, carried state between.

    For a block covering steps p..e the decay products come from one small
    decay matrix over [p-1, p..e]: its first column gives prod(lam_p..t)
    (how much of the incoming state reaches step t) and its last row gives
    prod(lam_{s+1}..e) (how much of step s survives to the block end).
    """
    n = inp.n
    if not isinstance(chunk, (int, np.integer)) or not 1 <= chunk <= n:
        raise ValueError(f"chunk must be an integer in [1, {n}], got {chunk!r}")
    q, k, v, lam = inp.q, inp.k, inp.v, inp.lam
    one = np.ones(1, dtype=lam.dtype)
    state = None
    outs = []
    pieces = zip(*(ops.split(x, chunk, axis=0) for x in (q, k, v, lam)))
    for qc, kc, vc, lc in pieces:
        m = qc.shape[0]
        D = decay_matrix(ops.concat([one, lc], axis=0))
        intra = (ops.matmul(qc, kc, transpose_b=True) * D[1:, 1:]) @ vc
        if state is None:
            outs.append(intra)
        else:
            reach = D[1:, 0:1]
            outs.append(intra + (qc * reach) @ state)
        survive = D[-1, 1:].reshape(m, 1)
        update = ops.matmul(kc * survive, vc, transpose_a=True)
        state = update if state is None else state * D[-1, 0] + update
    return outs[0] if len(outs) == 1 else ops.concat(outs, axis=0)


def _diagonal_term(inp: AttentionInputs) -> Tensor:
    return (inp.q * inp.k).sum(axis=1, keepdims=True) * inp.v


def two_scan_noncausal(inp: AttentionInputs, chunk: int | None = None, dedup_diagonal: bool = False) -> Tensor:
    """Forward causal scan plus a backward (reversed-index) causal scan.

    The backward pass is kv<_t = lam_t kv<_{t+1} + k_t v_t^T, so position t's
    own term lands in both directions and the diagonal is counted twice;
    ``dedup_diagonal`` subtracts one copy. With ``chunk`` set both passes use
    :func:`chunked_causal_scan`.
    """
    if chunk is None:
        run = causal_decay_scan
    else:
        def run(x):
            return chunked_causal_scan(x, min(chunk, x.n))
    fwd = run(inp)
    bwd = run(inp.reversed())[::-1]
    out = fwd + bwd
    if dedup_diagonal:
        out = out - _diagonal_term(inp)
    return out


def one_scan_noncausal(q, k, v) -> Tensor:
    """Right-product form Q (K^T V): two matmuls, no decay."""
    q, k, v = const(q), const(k), const(v)
    return q @ ops.matmul(k, v, transpose_a=True)
