"""LightNet attention (LNA), the GLU feed-forward block, and the residual layer.

Shapes: inputs are ``[..., n, d]``; inside LNA the heads are split out to
``[..., h, n, d/h]``. The decay of the causal form is not a separate
projection: it is 1 - w_t, where w_t = exp(k_t) / sum_{s<=t} exp(k_s) is
the prefix softmax of the key itself. The non-causal form replaces the
prefix softmax by the softmax over the whole sequence, which is the final
step of the causal recursion.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from lightnet.numerics import Rng, Tensor, ops, prefix_softmax, state_scan
from lightnet.numerics.ops import const
from lightnet.posenc import LrpeConfig, lrpe_rotate

NORM_EPS = 1e-6


def gate_rank(d: int) -> int:
    return max(1, d // 4)


def glu_width(d: int, h: int) -> int:
    """8d/3 rounded to the nearest multiple of h (at least h)."""
    return max(h, int(round(8 * d / 3 / h)) * h)


def named_tensors(obj, prefix: str = "") -> dict[str, Tensor]:
    """Flatten a (nested) parameter dataclass into ``{"a.b": tensor}``, skipping ``None``."""
    out = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if isinstance(val, Tensor):
            out[key] = val
        elif dataclasses.is_dataclass(val):
            out.update(named_tensors(val, key + "."))
    return out


def with_tensors(obj, values: dict[str, Tensor], prefix: str = ""):
    """Copy of ``obj`` with tensors replaced from a flat name mapping."""
    changes = {}
    for f in dataclasses.fields(obj):
        val = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if isinstance(val, Tensor) and key in values:
            changes[f.name] = values[key]
        elif dataclasses.is_dataclass(val):
            changes[f.name] = with_tensors(val, values, key + ".")
    return dataclasses.replace(obj, **changes)


def _weight(rng: Rng, shape, dtype, name, zero=False) -> Tensor:
    data = np.zeros(shape) if zero else rng.normal(shape, std=shape[0] ** -0.5)
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LnaParams:
    """Projections for one LNA block.

    ``wq``, ``wk``, ``wv``, ``wo`` are d x d, the gate is ``wu1 @ wu2`` with
    rank r, ``norm`` holds one RMS scale row per head ([h, d/h]). ``wdelta``
    is only set for the unshared-decay variant.
    """

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wu1: Tensor
    wu2: Tensor
    norm: Tensor
    wo: Tensor
    heads: int = dataclasses.field(default=1, metadata={"static": True})
    wdelta: Tensor | None = None

    def __post_init__(self):
        d = self.wq.shape[0]
        if any(w.shape != (d, d) for w in (self.wq, self.wk, self.wv, self.wo)):
            raise ValueError("wq, wk, wv and wo must all be d x d")
        if self.heads < 1 or d % self.heads:
            raise ValueError(f"width {d} is not divisible by {self.heads} heads")
        r = self.wu1.shape[1]
        if r < 1 or self.wu1.shape != (d, r) or self.wu2.shape != (r, d):
            raise ValueError(f"gate factors {self.wu1.shape} and {self.wu2.shape} do not form a rank-r d x d map")
        if self.norm.shape != (self.heads, d // self.heads):
            raise ValueError(f"norm scales must be [{self.heads}, {d // self.heads}], got {self.norm.shape}")
        if self.wdelta is not None and self.wdelta.shape != (d, d):
            raise ValueError("wdelta must be d x d")

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    @property
    def head_width(self) -> int:
        return self.d // self.heads

    @classmethod
    def init(cls, d: int, heads: int, rng: Rng, dtype=np.float64, rank: int | None = None,
             share_decay: bool = True, zero_output: bool = True) -> "LnaParams":
        r = rank or gate_rank(d)
        if d % heads:
            raise ValueError(f"width {d} is not divisible by {heads} heads")
        return cls(
            wq=_weight(rng, (d, d), dtype, "wq"),
            wk=_weight(rng, (d, d), dtype, "wk"),
            wv=_weight(rng, (d, d), dtype, "wv"),
            wu1=_weight(rng, (d, r), dtype, "wu1"),
            wu2=_weight(rng, (r, d), dtype, "wu2"),
            norm=Tensor(np.ones((heads, d // heads)), requires_grad=True, dtype=dtype, name="norm"),
            wo=_weight(rng, (d, d), dtype, "wo", zero=zero_output),
            heads=heads,
            wdelta=None if share_decay else _weight(rng, (d, d), dtype, "wdelta"),
        )


@dataclass(frozen=True)
class GluParams:
    wa: Tensor
    wb: Tensor
    wc: Tensor

    @classmethod
    def init(cls, d: int, f: int, rng: Rng, dtype=np.float64, zero_output: bool = True) -> "GluParams":
        return cls(
            _weight(rng, (d, f), dtype, "wa"),
            _weight(rng, (d, f), dtype, "wb"),
            _weight(rng, (f, d), dtype, "wc", zero=zero_output),
        )


@dataclass(frozen=True)
class LayerParams:
    lna: LnaParams
    glu: GluParams
    norm1: Tensor
    norm2: Tensor

    @classmethod
    def init(cls, d: int, heads: int, rng: Rng, dtype=np.float64, share_decay: bool = True,
             zero_output: bool = True) -> "LayerParams":
        ones = np.ones(d)
        return cls(
            LnaParams.init(d, heads, rng.fork("lna"), dtype, share_decay=share_decay, zero_output=zero_output),
            GluParams.init(d, glu_width(d, heads), rng.fork("glu"), dtype, zero_output=zero_output),
            Tensor(ones, requires_grad=True, dtype=dtype, name="norm1"),
            Tensor(ones, requires_grad=True, dtype=dtype, name="norm2"),
        )


# ---------------------------------------------------------------------------
# head plumbing
# ---------------------------------------------------------------------------


def split_heads(x: Tensor, h: int) -> Tensor:
    """[..., n, d] -> [..., h, n, d/h]."""
    *lead, n, d = x.shape
    return ops.moveaxis(x.reshape(tuple(lead) + (n, h, d // h)), -2, -3)


def merge_heads(x: Tensor) -> Tensor:
    """[..., h, n, w] -> [..., n, h*w]."""
    *lead, h, n, w = x.shape
    return ops.moveaxis(x, -3, -2).reshape(tuple(lead) + (n, h * w))


def _rotate(lrpe: LrpeConfig | None, x: Tensor, positions) -> Tensor:
    if lrpe is None:
        return x
    if positions is None:
        positions = np.arange(x.shape[-2])
    return lrpe_rotate(lrpe, x, positions=positions)


# ---------------------------------------------------------------------------
# attention cores (already split into heads)
# ---------------------------------------------------------------------------


def causal_mix(q, k, v, delta=None, lrpe: LrpeConfig | None = None, positions=None, return_state: bool = False):
    """Causal LNA mixing on head-split tensors, before norm and gate.

        w_t = exp(k_t) / s_t,  s_t = s_{t-1} + exp(k_t)
        kv_t = diag(1 - w_t) kv_{t-1} + w_t v_t^T
        o_t = kv_t^T q_t

    ``q`` is used as given (apply the feature map before calling). With
    ``delta`` the write weight still comes from ``k`` but the decay is
    1 minus the prefix softmax of ``delta``. Under LRPE both ``q`` and ``w``
    are rotated and the decay is repeated for the sin half.
    """
    q, k, v = const(q), const(k), const(v)
    w, keep = prefix_softmax(k, axis=-2)
    if delta is not None:
        _, keep = prefix_softmax(delta, axis=-2)
    if lrpe is not None:
        q, w = _rotate(lrpe, q, positions), _rotate(lrpe, w, positions)
        keep = ops.concat([keep, keep], axis=-1)
    return state_scan(q, keep, w, v, return_state=return_state)


def noncausal_summary(k, v, lrpe: LrpeConfig | None = None, positions=None) -> Tensor:
    """Softmax(K)^T V per head: [..., dk, dv] (dk doubled under LRPE)."""
    w = _rotate(lrpe, ops.softmax(const(k), axis=-2), positions)
    return ops.matmul(w, v, transpose_a=True)


def noncausal_mix(q, k, v, lrpe: LrpeConfig | None = None, positions=None) -> Tensor:
    """q (Softmax(K)^T V) with q rotated under LRPE; one pass, O(n d^2)."""
    q = _rotate(lrpe, const(q), positions)
    return q @ noncausal_summary(k, v, lrpe, positions)


# ---------------------------------------------------------------------------
# full blocks
# ---------------------------------------------------------------------------


def _project(p: LnaParams, X: Tensor):
    q = split_heads(ops.swish(X @ p.wq), p.heads)
    k = split_heads(X @ p.wk, p.heads)
    v = split_heads(X @ p.wv, p.heads)
    return q, k, v


def _finish(p: LnaParams, X: Tensor, o: Tensor) -> Tensor:
    o = ops.rms_norm(o, p.norm.reshape(p.heads, 1, p.head_width), NORM_EPS)
    gate = ops.sigmoid((X @ p.wu1) @ p.wu2)
    return (merge_heads(o) * gate) @ p.wo


def _check_lrpe(p: LnaParams, lrpe: LrpeConfig | None):
    if lrpe is not None and lrpe.d != p.head_width:
        raise ValueError(f"LRPE width {lrpe.d} does not match head width {p.head_width}")


def lna_causal(p: LnaParams, X, lrpe: LrpeConfig | None = None, positions=None, return_state: bool = False):
    """Causal LNA: o_t = Norm[kv_t^T swish(q_t)] * sigmoid(u_t), then the output projection.

    With ``return_state`` also returns the final per-head state kv_n.
    """
    X = const(X)
    _check_lrpe(p, lrpe)
    q, k, v = _project(p, X)
    delta = None if p.wdelta is None else split_heads(X @ p.wdelta, p.heads)
    res = causal_mix(q, k, v, delta, lrpe, positions, return_state)
    o, state = res if return_state else (res, None)
    out = _finish(p, X, o)
    return (out, state) if return_state else out


def lna_noncausal(p: LnaParams, X, lrpe: LrpeConfig | None = None, positions=None) -> Tensor:
    """Non-causal LNA: O = Norm[swish(Q) (Softmax(K)^T V)] * sigmoid(U), then the output projection.

    The unshared-decay variant has no effect here: the decay only exists
    in the causal recursion.
    """
    X = const(X)
    _check_lrpe(p, lrpe)
    q, k, v = _project(p, X)
    return _finish(p, X, noncausal_mix(q, k, v, lrpe, positions))


def lna_summary(p: LnaParams, X, lrpe: LrpeConfig | None = None, positions=None) -> Tensor:
    """The pooled per-head summary Softmax(K)^T V used by :func:`lna_noncausal`."""
    X = const(X)
    _, k, v = _project(p, X)
    return noncausal_summary(k, v, lrpe, positions)


def lna_decay(p: LnaParams, X) -> Tensor:
    """Per-head, per-feature write weights w_t of the causal form ([..., h, n, d/h]).

    The decay applied to the state at step t is 1 - w_t.
    """
    X = const(X)
    w, _ = prefix_softmax(split_heads(X @ p.wk, p.heads), axis=-2)
    return w


def glu(p: GluParams, X) -> Tensor:
    """(swish(X Wa) * (X Wb)) Wc."""
    X = const(X)
    return (ops.swish(X @ p.wa) * (X @ p.wb)) @ p.wc


def lightnet_layer(p: LayerParams, X, causal: bool = True, lrpe: LrpeConfig | None = None, positions=None) -> Tensor:
    """Pre-norm residual block: X + LNA(norm(X)), then + GLU(norm(.))."""
    X = const(X)
    attn = lna_causal if causal else lna_noncausal
    H = X + attn(p.lna, ops.rms_norm(X, p.norm1, NORM_EPS), lrpe, positions)
    return H + glu(p.glu, ops.rms_norm(H, p.norm2, NORM_EPS))


__all__ = [
    "GluParams",
    "LayerParams",
    "LnaParams",
    "causal_mix",
    "gate_rank",
    "glu",
    "glu_width",
    "lightnet_layer",
    "lna_causal",
    "lna_decay",
    "lna_noncausal",
    "lna_summary",
    "merge_heads",
    "named_tensors",
    "noncausal_mix",
    "noncausal_summary",
    "split_heads",
    "with_tensors",
]
