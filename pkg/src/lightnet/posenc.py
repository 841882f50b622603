"""Multi-dimensional positional encodings for flattened grids.

Grids are flattened row-major (last dimension fastest) and coordinates are
0-based. ``TPE`` is a one-sided Toeplitz filter applied along each grid axis
with coefficients t_j = sum_m gamma_m lam_m**j, evaluated by one linear scan
per mode. ``LRPE`` rotates each feature group by its own grid coordinate so
that inner products only see relative offsets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from lightnet.numerics import Rng, Tensor, linear_scan, ops
from lightnet.numerics.ops import const

DENSE_MAX_N = 4096


@dataclass(frozen=True)
class GridShape:
    extents: tuple[int, ...]

    def __post_init__(self):
        ext = tuple(int(e) for e in self.extents)
        if not ext or any(e < 1 for e in ext):
            raise ValueError(f"grid extents must be positive, got {self.extents}")
        object.__setattr__(self, "extents", ext)

    @classmethod
    def of(cls, *extents) -> "GridShape":
        if len(extents) == 1 and isinstance(extents[0], (tuple, list, GridShape)):
            extents = extents[0].extents if isinstance(extents[0], GridShape) else tuple(extents[0])
        return cls(tuple(extents))

    @property
    def k(self) -> int:
        return len(self.extents)

    @property
    def size(self) -> int:
        return math.prod(self.extents)

    def positions(self) -> np.ndarray:
        """[N, k] integer coordinates in flattening order."""
        return np.stack(np.unravel_index(np.arange(self.size), self.extents), axis=1)


# ---------------------------------------------------------------------------
# Toeplitz positional encoding
# ---------------------------------------------------------------------------


@dataclass
class TpeParams:
    """Per-axis exponential modes, ``raw`` and ``gamma`` both shaped [k, d, e].

    Decay rates are sigmoid(raw), so always strictly inside (0, 1).
    """

    raw: Tensor
    gamma: Tensor

    @classmethod
    def init(cls, k: int, d: int, e: int, rng: Rng | None = None, dtype=np.float64, gamma: float = 1.0) -> "TpeParams":
        rng = rng or Rng(0)
        lam = rng.uniform((k, d, e), 0.5, 0.99)
        raw = np.log(lam) - np.log1p(-lam)
        return cls(
            Tensor(raw, requires_grad=True, dtype=dtype, name="tpe.raw"),
            Tensor(np.full((k, d, e), gamma), requires_grad=True, dtype=dtype, name="tpe.gamma"),
        )

    @classmethod
    def from_decay(cls, lam, gamma=None) -> "TpeParams":
        lam = np.asarray(lam, dtype=np.float64)
        if np.any(lam <= 0) or np.any(lam >= 1):
            raise ValueError("TPE decay rates must lie strictly inside (0, 1)")
        g = np.ones_like(lam) if gamma is None else np.broadcast_to(gamma, lam.shape)
        return cls(Tensor(np.log(lam) - np.log1p(-lam), requires_grad=True), Tensor(g, requires_grad=True))

    @property
    def k(self) -> int:
        return self.raw.shape[0]

    @property
    def d(self) -> int:
        return self.raw.shape[1]

    @property
    def e(self) -> int:
        return self.raw.shape[2]

    def decay(self) -> Tensor:
        return ops.sigmoid(self.raw)

    def coefficients(self, length: int) -> np.ndarray:
        """t[s, j, c] = sum_m gamma[s, c, m] * lam[s, c, m]**j for j < length."""
        lam = self.decay().data
        powers = lam[:, None, :, :] ** np.arange(length)[None, :, None, None]
        return (powers * self.gamma.data[:, None]).sum(-1)


def _check_tpe(params: TpeParams, x: Tensor, grid: GridShape):
    if params.k != grid.k:
        raise ValueError(f"TPE has {params.k} axes but grid has {grid.k}")
    if x.ndim < 2 or x.shape[-2] != grid.size or x.shape[-1] != params.d:
        raise ValueError(f"input {x.shape} does not match grid {grid.extents} with width {params.d}")


def tpe_apply(params: TpeParams, x, grid: GridShape, residual: bool = True) -> Tensor:
    """y = x + sum over axes of the one-sided Toeplitz filter along that axis.

    ``x`` is ``[..., N, d]``. Each (axis, channel, mode) triple runs one
    linear scan with constant decay lam along every grid line, so the cost
    is O(N * d * e * k).
    """
    x = const(x)
    _check_tpe(params, x, grid)
    lead = x.shape[:-2]
    d, e = params.d, params.e
    b = len(lead)
    X = x.reshape(lead + grid.extents + (d, 1))
    lam = params.decay()
    ones = np.ones(e, dtype=x.dtype)
    total = None
    for s in range(grid.k):
        axis = b + s
        coef = lam[s].reshape((1,) * (b + grid.k) + (d, e))
        z = linear_scan(coef, X * ones, axis=axis)
        part = (z * params.gamma[s]).sum(axis=-1)
        total = part if total is None else total + part
    out = total.reshape(x.shape)
    return x + out if residual else out


def tpe_dense_oracle(params: TpeParams, x, grid: GridShape, residual: bool = True) -> Tensor:
    """Same sum as :func:`tpe_apply` via explicit lower-triangular Toeplitz matrices."""
    x = const(x)
    _check_tpe(params, x, grid)
    if grid.size > DENSE_MAX_N:
        raise ValueError(f"dense oracle limited to N <= {DENSE_MAX_N}, got {grid.size}")
    lead = x.shape[:-2]
    d = params.d
    X = x.data.reshape(lead + grid.extents + (d,))
    out = np.zeros_like(X)
    for s, length in enumerate(grid.extents):
        t = params.coefficients(length)[s]  # [length, d]
        i, j = np.indices((length, length))
        T = np.where(i >= j, t[np.clip(i - j, 0, None)].transpose(2, 0, 1), 0.0)  # [d, length, length]
        axis = len(lead) + s
        Xs = np.moveaxis(X, axis, -1)  # [..., d, length]
        Ys = np.einsum("cij,...cj->...ci", T, Xs)
        out += np.moveaxis(Ys, -1, axis)
    y = out.reshape(x.shape)
    return Tensor(x.data + y if residual else y)


# ---------------------------------------------------------------------------
# linearized relative positional encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LrpeConfig:
    """Rotation schedule for ``d`` features split into ``k`` contiguous groups.

    Feature j (1-based within its group) turns by theta_j = 10000**(-2j/d)
    per unit step of that group's grid coordinate.
    """

    d: int
    k: int = 1
    base: float = 10000.0

    def __post_init__(self):
        if self.d < 1 or self.k < 1:
            raise ValueError("d and k must be positive")
        if self.d % self.k:
            raise ValueError(f"feature width {self.d} is not divisible by {self.k} grid dimensions")

    @property
    def group(self) -> int:
        return self.d // self.k

    @property
    def theta(self) -> np.ndarray:
        j = np.arange(1, self.group + 1)
        return self.base ** (-2.0 * j / self.d)

    def angles(self, positions) -> np.ndarray:
        """[N, d] rotation angles for [N, k] (or [N] when k == 1) coordinates."""
        pos = np.asarray(positions, dtype=np.float64)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[-1] != self.k:
            raise ValueError(f"positions have {pos.shape[-1]} coordinates, config expects {self.k}")
        return (pos[:, :, None] * self.theta[None, None, :]).reshape(pos.shape[0], self.d)


def _positions(grid, positions):
    if positions is not None:
        return np.asarray(positions)
    if grid is None:
        raise ValueError("pass either a grid or explicit positions")
    return GridShape.of(grid).positions()


def lrpe_rotate(cfg: LrpeConfig, x, grid: GridShape | None = None, positions=None) -> Tensor:
    """[..., N, d] -> [..., N, 2d] as [x * cos(angles), x * sin(angles)].

    For rotated vectors a and b, a . b is the real part of the Hermitian
    product of the complex rotations, sum_j x_j y_j cos(angle_b - angle_a).
    """
    x = const(x)
    if x.shape[-1] != cfg.d:
        raise ValueError(f"input width {x.shape[-1]} does not match config width {cfg.d}")
    ang = cfg.angles(_positions(grid, positions))
    if ang.shape[0] != x.shape[-2]:
        raise ValueError(f"{ang.shape[0]} positions for {x.shape[-2]} rows")
    cos, sin = np.cos(ang).astype(x.dtype), np.sin(ang).astype(x.dtype)
    return ops.concat([x * cos, x * sin], axis=-1)


def lrpe_relative_check(cfg: LrpeConfig, q, k, n, m, tol: float = 1e-10) -> bool:
    """<rot(q at n), rot(k at m)> == <q, rot(k by m - n)>, within ``tol``."""
    q, k = np.asarray(q, dtype=np.float64), np.asarray(k, dtype=np.float64)
    n, m = np.atleast_1d(n), np.atleast_1d(m)
    lhs = float(lrpe_rotate(cfg, q[None], positions=n[None]).data[0] @ lrpe_rotate(cfg, k[None], positions=m[None]).data[0])
    rhs = float(np.concatenate([q, np.zeros_like(q)]) @ lrpe_rotate(cfg, k[None], positions=(m - n)[None]).data[0])
    return abs(lhs - rhs) <= tol * max(1.0, abs(lhs))
