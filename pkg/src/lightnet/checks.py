"""Seeded oracle and property suites behind ``lightnet check``.

Every case draws its inputs from a stream forked off the suite seed by case
name and index, so a case can be replayed on its own. A case returns the
error it measured plus the inputs that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from lightnet.attention import AttentionInputs, causal_decay_scan, chunked_causal_scan, masked_attention_oracle
from lightnet.layers import LnaParams, lna_causal, lna_decay, lna_summary, split_heads
from lightnet.numerics import Rng, Tensor
from lightnet.posenc import GridShape, LrpeConfig, TpeParams, lrpe_rotate, tpe_apply, tpe_dense_oracle
from lightnet.recurrence import RecurrenceSpec, is_recurrence_representable, scan, unroll

SUITES = ("recurrence", "attention", "posenc", "lna")


@dataclass(frozen=True)
class Case:
    name: str
    count: int
    run: Callable[[Rng], tuple[float, dict]]
    tol: float


@dataclass
class CaseFailure:
    name: str
    index: int
    seed: int
    error: float
    tol: float
    inputs: dict

    def to_json(self) -> dict:
        return {
            "case": self.name,
            "index": self.index,
            "seed": self.seed,
            "error": self.error,
            "tol": self.tol,
            "inputs": {k: np.asarray(v).tolist() for k, v in self.inputs.items()},
        }


# ---------------------------------------------------------------------------
# recurrence
# ---------------------------------------------------------------------------


def _recurrence_roundtrip(rng: Rng):
    n = int(rng.integers(1, 65))
    a = rng.uniform(n, 1e-3, 1.0)
    a[rng.uniform(n) < 0.1] = 1.0
    a[0] = 0.0
    res = is_recurrence_representable(unroll(a))
    if not res:
        return float("inf"), {"a": a}
    return float(np.max(np.abs(res.a - a))), {"a": a}


def _scan_vs_unroll(rng: Rng):
    n, d = int(rng.integers(1, 65)), int(rng.integers(1, 9))
    a = rng.uniform(n, 0.0, 1.0)
    x = rng.normal((n, d))
    y = scan(RecurrenceSpec(a), x).data
    return float(np.max(np.abs(y - unroll(a).c @ x))), {"a": a, "x": x}


def _additive_is_representable(rng: Rng):
    n = int(rng.integers(2, 33))
    delta = rng.uniform(n, 0.0, 2.0)
    delta[0] += 0.1
    spec = RecurrenceSpec.additive(delta)
    g = np.cumsum(delta)
    c = np.tril(g[None, :] / g[:, None])
    return float(np.max(np.abs(unroll(spec).c - c))), {"delta": delta}


# ---------------------------------------------------------------------------
# attention
# ---------------------------------------------------------------------------


def _attention_inputs(rng: Rng, max_n=64, max_d=16):
    n, d = int(rng.integers(1, max_n + 1)), int(rng.integers(1, max_d + 1))
    q, k, v = rng.normal((n, d)), rng.normal((n, d)), rng.normal((n, d))
    lam = rng.uniform(n, 0.0, 1.0)
    return AttentionInputs(Tensor(q), Tensor(k), Tensor(v), Tensor(lam)), {"q": q, "k": k, "v": v, "lam": lam}


def _scan_vs_oracle(rng: Rng):
    inp, raw = _attention_inputs(rng)
    return float(np.max(np.abs(causal_decay_scan(inp).data - masked_attention_oracle(inp).data))), raw


def _chunked_vs_oracle(rng: Rng):
    inp, raw = _attention_inputs(rng)
    ref = masked_attention_oracle(inp).data
    err = 0.0
    for chunk in sorted({1, min(7, inp.n), min(16, inp.n), inp.n}):
        err = max(err, float(np.max(np.abs(chunked_causal_scan(inp, chunk).data - ref))))
    return err, raw


# ---------------------------------------------------------------------------
# positional encodings
# ---------------------------------------------------------------------------


def _random_grid(rng: Rng, max_n=128) -> GridShape:
    while True:
        k = int(rng.integers(1, 4))
        ext = tuple(int(e) for e in rng.integers(1, 9, k))
        if np.prod(ext) <= max_n:
            return GridShape(ext)


def _tpe_vs_dense(rng: Rng):
    grid = _random_grid(rng)
    d, e = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    p = TpeParams.init(grid.k, d, e, rng)
    gamma = rng.normal((grid.k, d, e))
    p = TpeParams(p.raw, Tensor(gamma))
    x = rng.normal((grid.size, d))
    err = float(np.max(np.abs(tpe_apply(p, x, grid).data - tpe_dense_oracle(p, x, grid).data)))
    return err, {"extents": list(grid.extents), "raw": p.raw.data, "gamma": gamma, "x": x}


def _lrpe_relative(rng: Rng):
    extents = (4, 4) if rng.uniform(1)[0] < 0.5 else (2, 3, 4)
    grid = GridShape(extents)
    cfg = LrpeConfig(2 * grid.k * int(rng.integers(1, 5)), grid.k)
    pos = grid.positions()
    q, k = rng.normal(cfg.d), rng.normal(cfg.d)
    n, m = pos[rng.integers(0, grid.size)], pos[rng.integers(0, grid.size)]

    def dot(qp, kp):
        return float(lrpe_rotate(cfg, q[None], positions=qp[None]).data[0] @ lrpe_rotate(cfg, k[None], positions=kp[None]).data[0])

    base = dot(n, m)
    rel = float(np.concatenate([q, 0 * q]) @ lrpe_rotate(cfg, k[None], positions=(m - n)[None]).data[0])
    shift = rng.integers(-5, 6, grid.k)
    err = max(abs(base - rel), abs(dot(n + shift, m + shift) - base))
    return err, {"extents": list(extents), "q": q, "k": k, "n": n, "m": m, "shift": shift}


# ---------------------------------------------------------------------------
# LNA
# ---------------------------------------------------------------------------


def _lna_setup(rng: Rng, max_n=64):
    n, heads = int(rng.integers(1, max_n + 1)), int(rng.integers(1, 3))
    d = heads * int(rng.integers(1, 5))
    p = LnaParams.init(d, heads, rng, zero_output=False)
    X = rng.normal((n, d)) * 2
    return p, X


def _lna_softmax_identity(rng: Rng):
    p, X = _lna_setup(rng)
    _, state = lna_causal(p, X, return_state=True)
    err = float(np.max(np.abs(state.data - lna_summary(p, X).data)))
    return err, {"X": X, "wk": p.wk.data, "wv": p.wv.data, "heads": p.heads}


def _lna_additive_decay(rng: Rng):
    p, X = _lna_setup(rng)
    w = lna_decay(p, X).data
    k = split_heads(Tensor(X) @ p.wk, p.heads).data
    ref = np.empty_like(w)
    for h in range(k.shape[0]):
        for j in range(k.shape[-1]):
            ref[h, :, j] = RecurrenceSpec.additive(np.exp(k[h, :, j])).a
    return float(np.max(np.abs((1 - w) - ref))), {"X": X, "wk": p.wk.data, "heads": p.heads}


def _lna_causality(rng: Rng):
    p, X = _lna_setup(rng)
    n = X.shape[0]
    t = int(rng.integers(0, n))
    X2 = X.copy()
    X2[t + 1:] += rng.normal(X2[t + 1:].shape)
    err = float(np.max(np.abs(lna_causal(p, X2).data[: t + 1] - lna_causal(p, X).data[: t + 1])))
    return err, {"X": X, "X_perturbed": X2, "t": t}


CASES: dict[str, list[Case]] = {
    "recurrence": [
        Case("unroll_roundtrip", 200, _recurrence_roundtrip, 1e-12),
        Case("scan_vs_unroll", 200, _scan_vs_unroll, 1e-12),
        Case("additive_chain", 50, _additive_is_representable, 1e-12),
    ],
    "attention": [
        Case("scan_vs_masked", 50, _scan_vs_oracle, 1e-10),
        Case("chunked_vs_masked", 50, _chunked_vs_oracle, 1e-10),
    ],
    "posenc": [
        Case("tpe_vs_dense", 50, _tpe_vs_dense, 1e-10),
        Case("lrpe_relative", 200, _lrpe_relative, 1e-10),
    ],
    "lna": [
        Case("softmax_identity", 50, _lna_softmax_identity, 1e-10),
        Case("additive_decay", 50, _lna_additive_decay, 1e-12),
        Case("causality", 30, _lna_causality, 1e-12),
    ],
}


def case_rng(seed: int, name: str, index: int) -> Rng:
    return Rng(seed).fork(f"{name}/{index}")


def run_suite(suite: str, seed: int = 0, force_failure: bool = False) -> tuple[dict, CaseFailure | None]:
    """Run one suite (or ``all``); returns the JSON report and the first failure."""
    names = SUITES if suite == "all" else (suite,)
    if any(s not in CASES for s in names):
        raise ValueError(f"unknown suite {suite!r}")
    cases = passed = 0
    max_error = 0.0
    first: CaseFailure | None = None
    for s in names:
        for case in CASES[s]:
            for i in range(case.count):
                err, inputs = case.run(case_rng(seed, case.name, i))
                tol = -1.0 if force_failure and cases == 0 else case.tol
                cases += 1
                max_error = max(max_error, err)
                if err <= tol:
                    passed += 1
                elif first is None:
                    first = CaseFailure(f"{s}.{case.name}", i, seed, err, tol, inputs)
    report = {"suite": suite, "cases": cases, "passed": passed, "max_error": max_error}
    if first is not None:
        report["failure"] = first.to_json()
    return report, first
