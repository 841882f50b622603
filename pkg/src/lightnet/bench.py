"""1-scan vs 2-scan timing harness.

Each variant is timed forward (with the tape recording, as in training)
and backward (adjoint replay for a fixed random cotangent). Reported times
are medians over ``reps`` runs after ``warmup`` untimed runs, on one BLAS
thread.
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from contextlib import nullcontext
from dataclasses import dataclass, fields

import numpy as np

from lightnet.attention import AttentionInputs, chunked_causal_scan, one_scan_noncausal, two_scan_noncausal
from lightnet.numerics import Tape, Tensor, as_dtype

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover
    threadpool_limits = None

DEFAULT_N_LIST = (256, 1024, 4096, 16384)
VARIANTS = ("1-scan", "2-scan", "causal-chunked")
MIN_REPS = 5
CSV_HEADER = ("variant", "n", "d", "dtype", "reps", "forward_ms", "backward_ms")


@dataclass(frozen=True)
class TimingRecord:
    variant: str
    n: int
    d: int
    dtype: str
    reps: int
    forward_ms: float
    backward_ms: float


def single_thread():
    return threadpool_limits(limits=1) if threadpool_limits is not None else nullcontext()


def _variant_fn(name: str, chunk: int, dedup_diagonal: bool):
    if name == "1-scan":
        return lambda inp: one_scan_noncausal(inp.q, inp.k, inp.v)
    if name == "2-scan":
        return lambda inp: two_scan_noncausal(inp, chunk=chunk, dedup_diagonal=dedup_diagonal)
    if name == "causal-chunked":
        return lambda inp: chunked_causal_scan(inp, min(chunk, inp.n))
    raise ValueError(f"unknown variant {name!r}")


def time_variant(fn, inp: AttentionInputs, cotangent: np.ndarray, reps: int, warmup: int = 1) -> tuple[float, float]:
    params = [inp.q, inp.k, inp.v, inp.lam]
    fwd, bwd = [], []
    for i in range(warmup + reps):
        with Tape() as tape:
            tape.watch(*params)
            t0 = time.perf_counter()
            out = fn(inp)
            t1 = time.perf_counter()
        tape.gradient(out, params, seed=cotangent)
        t2 = time.perf_counter()
        if i >= warmup:
            fwd.append((t1 - t0) * 1e3)
            bwd.append((t2 - t1) * 1e3)
    return statistics.median(fwd), statistics.median(bwd)


def bench_scans(
    n_list=DEFAULT_N_LIST,
    d: int = 64,
    dtype: str = "f32",
    reps: int = MIN_REPS,
    chunk: int = 64,
    seed: int = 0,
    warmup: int = 1,
    dedup_diagonal: bool = False,
    variants=VARIANTS,
) -> list[TimingRecord]:
    if reps < MIN_REPS:
        raise ValueError(f"reps must be at least {MIN_REPS}, got {reps}")
    if warmup < 1:
        raise ValueError("at least one warmup run is required")
    dt = as_dtype(dtype)
    rng = np.random.default_rng(seed)
    records = []
    with single_thread():
        for n in n_list:
            scale = d**-0.5
            q, k, v = (rng.standard_normal((n, d)) * scale for _ in range(3))
            lam = rng.uniform(0.9, 1.0, n)
            inp = AttentionInputs(Tensor(q, dtype=dt), Tensor(k, dtype=dt), Tensor(v, dtype=dt), Tensor(lam, dtype=dt))
            cot = rng.standard_normal((n, d)).astype(dt)
            for name in variants:
                f_ms, b_ms = time_variant(_variant_fn(name, chunk, dedup_diagonal), inp, cot, reps, warmup)
                records.append(TimingRecord(name, n, d, dtype, reps, f_ms, b_ms))
    return records


def records_to_csv(records, path=None) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.variant, r.n, r.d, r.dtype, r.reps, f"{r.forward_ms:.6f}", f"{r.backward_ms:.6f}"])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


def records_from_csv(text: str) -> list[TimingRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if tuple(rows[0]) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {rows[0]}")
    types = [f.type for f in fields(TimingRecord)]
    conv = {"str": str, "int": int, "float": float}
    return [TimingRecord(*(conv[t](x) for t, x in zip(types, row))) for row in rows[1:]]


def ratio_table(records) -> list[tuple[int, float, float]]:
    """(n, forward ratio, backward ratio) of 2-scan over 1-scan."""
    by = {(r.variant, r.n): r for r in records}
    out = []
    for n in sorted({r.n for r in records}):
        one, two = by.get(("1-scan", n)), by.get(("2-scan", n))
        if one and two:
            out.append((n, two.forward_ms / one.forward_ms, two.backward_ms / one.backward_ms))
    return out


__all__ = [
    "CSV_HEADER",
    "DEFAULT_N_LIST",
    "MIN_REPS",
    "TimingRecord",
    "VARIANTS",
    "bench_scans",
    "ratio_table",
    "records_from_csv",
    "records_to_csv",
]
