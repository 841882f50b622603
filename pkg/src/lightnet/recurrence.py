"""1D linear recurrences y_t = a_t y_{t-1} + x_t and their unrolled form.

A recurrence over n steps is equivalent to the lower-triangular linear map
y_t = sum_{s<=t} c_ts x_s with c_ts = prod(a_{s+1..t}). A coefficient
matrix comes from some recurrence exactly when it factorises that way, which
is what :func:`is_recurrence_representable` tests.

Steps are 0-indexed in arrays; the docstrings below use 1-based t to match
the usual notation, so ``a[0]`` is a_1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from lightnet.numerics import Tensor, linear_scan
from lightnet.numerics.ops import const

DEFAULT_TOL = 1e-9


@dataclass(frozen=True)
class RecurrenceSpec:
    """Per-step coefficients a_1..a_n, optionally with the generator they came from.

    ``kind`` is ``"multiplicative"`` (``generator`` holds rho), ``"additive"``
    (``generator`` holds delta) or ``None`` for raw coefficients.
    """

    a: np.ndarray
    kind: str | None = None
    generator: np.ndarray | None = None

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        if a.ndim != 1 or a.size == 0:
            raise ValueError(f"coefficients must be a non-empty 1-D array, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("coefficients must be finite")
        a.flags.writeable = False
        object.__setattr__(self, "a", a)

    @property
    def n(self) -> int:
        return self.a.size

    @classmethod
    def multiplicative(cls, rho) -> "RecurrenceSpec":
        """a_t = rho_t with 0 < rho_t <= 1."""
        rho = np.asarray(rho, dtype=np.float64)
        if np.any(rho <= 0) or np.any(rho > 1):
            raise ValueError("multiplicative generator needs 0 < rho <= 1")
        return cls(rho.copy(), "multiplicative", rho)

    @classmethod
    def additive(cls, delta) -> "RecurrenceSpec":
        """a_t = (sum_{s<t} delta_s) / (sum_{s<=t} delta_s), with a_1 = 0.

        The importance score g(t) = cumsum(delta) is the normaliser; it must
        be positive from the first step on.
        """
        delta = np.asarray(delta, dtype=np.float64)
        if np.any(delta < 0):
            raise ValueError("additive generator needs delta >= 0")
        if delta.size == 0 or delta[0] <= 0:
            raise ValueError("additive generator needs delta_1 > 0")
        g = np.cumsum(delta)
        a = np.empty_like(g)
        a[0] = 0.0
        a[1:] = g[:-1] / g[1:]
        return cls(a, "additive", delta)

    @classmethod
    def from_score(cls, g, kind: str = "additive") -> "RecurrenceSpec":
        """Build from a positive non-decreasing importance score g(1..n).

        ``additive`` uses delta_t = g(t) - g(t-1) with g(0) = 0;
        ``multiplicative`` uses rho_t = g(t-1)/g(t) for t >= 2 and rho_1 = 1.
        Both give a_t = g(t-1)/g(t) for t >= 2.
        """
        g = np.asarray(g, dtype=np.float64)
        if np.any(g <= 0) or np.any(np.diff(g) < 0):
            raise ValueError("score must be positive and non-decreasing")
        if kind == "additive":
            return cls.additive(np.diff(g, prepend=0.0))
        if kind == "multiplicative":
            rho = np.ones_like(g)
            rho[1:] = g[:-1] / g[1:]
            return cls.multiplicative(rho)
        raise ValueError(f"unknown kind {kind!r}")


@dataclass(frozen=True)
class CoefficientMatrix:
    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"coefficient matrix must be square, got shape {c.shape}")
        object.__setattr__(self, "c", c)

    @property
    def n(self) -> int:
        return self.c.shape[0]


def _coefficients(spec) -> np.ndarray:
    return spec.a if isinstance(spec, RecurrenceSpec) else np.asarray(spec, dtype=np.float64)


def scan(spec: RecurrenceSpec, x) -> Tensor:
    """Run the recurrence over the rows of ``x`` ([n] or [n, d]), sequentially."""
    x = const(x)
    a = _coefficients(spec)
    if x.shape[0] != a.size:
        raise ValueError(f"recurrence has {a.size} steps but input has {x.shape[0]} rows")
    coef = a.reshape((a.size,) + (1,) * (x.ndim - 1)).astype(x.dtype)
    return linear_scan(coef, x, axis=0)


def unroll(spec: RecurrenceSpec) -> CoefficientMatrix:
    """c_ts = prod(a_{s+1..t}), c_tt = 1, zeros above the diagonal."""
    a = _coefficients(spec)
    n = a.size
    c = np.zeros((n, n))
    for t in range(n):
        if t:
            c[t, :t] = c[t - 1, :t] * a[t]
        c[t, t] = 1.0
    return CoefficientMatrix(c)


@dataclass(frozen=True)
class Representability:
    """Outcome of :func:`is_recurrence_representable`; truthy when representable.

    ``a`` holds the recovered coefficients (a_1 reported as 0, since it never
    affects the output) or ``None``. ``max_error`` is the worst deviation
    from the chain-product factorisation.
    """

    representable: bool
    a: np.ndarray | None
    max_error: float

    def __bool__(self) -> bool:
        return self.representable


def is_recurrence_representable(c, tol: float = DEFAULT_TOL) -> Representability:
    """Whether y = c x can be computed by a 1D linear recurrence.

    Equivalent to c_ts = g(s)/g(t) for some g. Tested without fixing g's
    free scale: c_tt must be 1, entries above the diagonal 0, and every
    c_ts must equal the chain product c_{s+1,s} c_{s+2,s+1} ... c_{t,t-1}.
    Zero sub-diagonal entries are allowed.
    """
    c = c.c if isinstance(c, CoefficientMatrix) else np.asarray(c, dtype=np.float64)
    n = c.shape[0]
    if c.shape != (n, n):
        raise ValueError(f"coefficient matrix must be square, got shape {c.shape}")
    a = np.zeros(n)
    a[1:] = np.diagonal(c, -1)
    if not np.all(np.isfinite(c)):
        return Representability(False, None, float("inf"))
    expected = unroll(a).c
    err = float(np.max(np.abs(c - expected))) if n else 0.0
    ok = err <= tol
    return Representability(ok, a if ok else None, err)


def additive_global_decay(delta, t: int) -> float:
    """(sum_{s<t} delta_s) / (sum_s delta_s) for 1-based step t.

    The denominator is the total over the whole sequence, so every step sees
    global information and the non-causal form needs one pass.
    """
    delta = np.asarray(delta.data if isinstance(delta, Tensor) else delta, dtype=np.float64)
    if np.any(delta < 0):
        raise ValueError("delta must be non-negative")
    total = delta.sum()
    if total == 0:
        raise ValueError("total importance is zero; global decay undefined")
    if not 1 <= t <= delta.size:
        raise IndexError(f"step {t} outside 1..{delta.size}")
    return float(delta[: t - 1].sum() / total)
