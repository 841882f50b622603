"""End-to-end LightNet: embedding, optional TPE, stacked layers, task head.

Parameters live in one flat ordered ``{name: Tensor}`` mapping so the
optimizer, gradient checks and checkpoints all see the same names.

Parameter count (shared decay, d model width, L layers, r = max(1, d // 4),
f = glu_width(d, h), k grid dims, e TPE modes, V input rows, C outputs):

    V*d                      embedding (token table or channel projection)
  + 2*k*d*e                  TPE decay logits and mode weights (if enabled)
  + L * (4*d*d + 2*d*r + d   LNA: q, k, v, o projections, gate factors, head norms
         + 3*d*f             GLU
         + 2*d)              two pre-norm scales
  + d                        final norm
  + d*C                      output head

The unshared-decay variant adds d*d per layer. For d=64, L=2, h=2 (r=16,
f=170) the layer stack alone is 2 * 51264 = 102528.
"""

from __future__ import annotations

import dataclasses
import functools
from dataclasses import dataclass

import numpy as np

from lightnet.layers import LayerParams, glu_width, gate_rank, lightnet_layer, named_tensors, with_tensors
from lightnet.numerics import DTYPES, Rng, Tensor, as_dtype, ops
from lightnet.numerics.ops import const
from lightnet.posenc import GridShape, LrpeConfig, TpeParams, tpe_apply


@dataclass(frozen=True)
class ModelConfig:
    """``vocab`` > 0 selects a token embedding; otherwise ``in_channels`` > 0
    selects a linear projection of continuous features. ``classes`` > 0
    adds a mean-pooled classification head, otherwise the head predicts the
    next token over ``vocab``. ``grid`` fixes the positional layout (the
    sequence is treated as a 1-D grid when it is empty).
    """

    vocab: int = 256
    in_channels: int = 0
    classes: int = 0
    d: int = 64
    layers: int = 2
    heads: int = 2
    tpe_modes: int = 4
    grid: tuple[int, ...] = ()
    causal: bool = True
    lrpe: bool = True
    tpe: bool = True
    share_decay: bool = True
    seed: int = 0
    dtype: str = "f64"

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if (self.vocab > 0) == (self.in_channels > 0):
            raise ValueError("exactly one of vocab and in_channels must be positive")
        if self.classes < 0 or (self.classes == 0 and self.vocab <= 0):
            raise ValueError("a next-token head needs a vocabulary")
        for name in ("d", "layers", "heads"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.layers and self.d % self.heads:
            raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
        if any(g < 1 for g in self.grid):
            raise ValueError(f"grid extents must be positive, got {self.grid}")
        if self.tpe and self.tpe_modes < 1:
            raise ValueError("TPE needs at least one mode")
        if self.lrpe and (self.d // self.heads) % self.grid_dims:
            raise ValueError(f"head width {self.d // self.heads} is not divisible by {self.grid_dims} grid dimensions")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def grid_dims(self) -> int:
        return max(1, len(self.grid))

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["grid"] = list(self.grid)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**{**data, "grid": tuple(data.get("grid", ()))})

    def first_difference(self, other: "ModelConfig") -> str | None:
        for f in dataclasses.fields(self):
            if getattr(self, f.name) != getattr(other, f.name):
                return f.name
        return None


def parameter_count(cfg: ModelConfig) -> int:
    """Closed-form count documented in the module docstring."""
    d, L = cfg.d, cfg.layers
    r, f = gate_rank(d), glu_width(d, cfg.heads)
    rows = cfg.vocab if cfg.vocab > 0 else cfg.in_channels
    outs = cfg.classes if cfg.classes > 0 else cfg.vocab
    per_layer = 4 * d * d + 2 * d * r + d + 3 * d * f + 2 * d
    if not cfg.share_decay:
        per_layer += d * d
    tpe = 2 * cfg.grid_dims * d * cfg.tpe_modes if cfg.tpe else 0
    return rows * d + tpe + L * per_layer + d + d * outs


class LightNetModel:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self._template = _layer_template(cfg.d, cfg.heads, cfg.share_decay)
        expected = _param_shapes(cfg)
        if list(params) != list(expected):
            missing = [k for k in expected if k not in params]
            extra = [k for k in params if k not in expected]
            raise ValueError(f"parameter names do not match config (missing {missing[:3]}, unexpected {extra[:3]})")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ValueError(f"parameter {name} has shape {params[name].shape}, expected {shape}")
        self.params = dict(params)

    @property
    def num_parameters(self) -> int:
        return sum(t.size for t in self.params.values())

    def with_params(self, params: dict[str, Tensor]) -> "LightNetModel":
        return LightNetModel(self.cfg, {**self.params, **params})

    def grid_for(self, n: int) -> GridShape:
        if self.cfg.grid:
            grid = GridShape(self.cfg.grid)
            if grid.size != n:
                raise ValueError(f"sequence length {n} does not match grid {self.cfg.grid}")
            return grid
        return GridShape((n,))

    def embed(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        """Input embedding plus the TPE residual path."""
        p = self.params if params is None else params
        cfg = self.cfg
        if cfg.vocab > 0:
            tokens = np.asarray(x)
            if not np.issubdtype(tokens.dtype, np.integer):
                raise ValueError("token inputs must be integers")
            if tokens.size and (tokens.min() < 0 or tokens.max() >= cfg.vocab):
                raise ValueError(f"token ids must lie in [0, {cfg.vocab})")
            h = p["embed"][tokens]
        else:
            h = const(x, p["embed"]) @ p["embed"]
        if cfg.tpe:
            grid = self.grid_for(h.shape[-2])
            h = tpe_apply(TpeParams(p["tpe.raw"], p["tpe.gamma"]), h, grid)
        return h

    def features(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        """Final-normed hidden states [..., n, d]."""
        p = self.params if params is None else params
        cfg = self.cfg
        h = self.embed(x, p)
        n = h.shape[-2]
        lrpe = positions = None
        if cfg.lrpe:
            grid = self.grid_for(n)
            lrpe = LrpeConfig(cfg.d // cfg.heads, grid.k)
            positions = grid.positions()
        for i in range(cfg.layers):
            layer = with_tensors(self._template, p, f"layers.{i}.")
            h = lightnet_layer(layer, h, cfg.causal, lrpe, positions)
        return ops.rms_norm(h, p["norm"])

    def forward(self, x, params: dict[str, Tensor] | None = None) -> Tensor:
        """Logits: [..., n, vocab] for the token head, [..., classes] for classification."""
        p = self.params if params is None else params
        h = self.features(x, p)
        if self.cfg.classes > 0:
            h = h.mean(axis=-2)
        return h @ p["head"]

    __call__ = forward


@functools.lru_cache(maxsize=32)
def _layer_template(d: int, heads: int, share_decay: bool) -> LayerParams:
    # structure only; the tensors are always swapped for the model's own
    return LayerParams.init(d, heads, Rng(0), share_decay=share_decay)


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d = cfg.d
    shapes = {"embed": (cfg.vocab if cfg.vocab > 0 else cfg.in_channels, d)}
    if cfg.tpe:
        shapes["tpe.raw"] = shapes["tpe.gamma"] = (cfg.grid_dims, d, cfg.tpe_modes)
    tmpl = _layer_template(d, cfg.heads, cfg.share_decay)
    for i in range(cfg.layers):
        for name, t in named_tensors(tmpl, f"layers.{i}.").items():
            shapes[name] = t.shape
    shapes["norm"] = (d,)
    shapes["head"] = (d, cfg.classes if cfg.classes > 0 else cfg.vocab)
    return shapes


def build_model(cfg: ModelConfig, rng: Rng | None = None) -> LightNetModel:
    """Deterministic initialisation from ``cfg.seed`` (or ``rng``).

    Every residual branch ends in a zero matrix, so at initialisation the
    layer stack is the identity.
    """
    rng = rng or Rng(cfg.seed)
    dt = as_dtype(cfg.dtype)
    d = cfg.d
    params: dict[str, Tensor] = {}
    rows = cfg.vocab if cfg.vocab > 0 else cfg.in_channels
    std = 1.0 if cfg.vocab > 0 else rows**-0.5
    params["embed"] = Tensor(rng.fork("embed").normal((rows, d), std), requires_grad=True, dtype=dt, name="embed")
    if cfg.tpe:
        tpe = TpeParams.init(cfg.grid_dims, d, cfg.tpe_modes, rng.fork("tpe"), dt)
        params["tpe.raw"], params["tpe.gamma"] = tpe.raw, tpe.gamma
    for i in range(cfg.layers):
        layer = LayerParams.init(d, cfg.heads, rng.fork(f"layer{i}"), dt, share_decay=cfg.share_decay)
        params.update(named_tensors(layer, f"layers.{i}."))
    params["norm"] = Tensor(np.ones(d), requires_grad=True, dtype=dt, name="norm")
    outs = cfg.classes if cfg.classes > 0 else cfg.vocab
    params["head"] = Tensor(rng.fork("head").normal((d, outs), d**-0.5 * 0.1), requires_grad=True, dtype=dt, name="head")
    return LightNetModel(cfg, params)


__all__ = ["LightNetModel", "ModelConfig", "build_model", "parameter_count"]
