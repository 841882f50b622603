"""Acceptance criteria, one test per criterion.

Each test prints a single ``PASS`` or ``FAIL`` line with the measured
numbers (visible with ``-s``; the lines are also repeated in the pytest
terminal summary) and then asserts the criterion at its stated tolerance.
Criteria 10 and 11 take several minutes; run this file alone with
``pytest tests/test_acceptance.py -v``.
"""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from lightnet.attention import (
    AttentionInputs,
    causal_decay_scan,
    chunked_causal_scan,
    masked_attention_oracle,
    one_scan_noncausal,
    two_scan_noncausal,
)
from lightnet.bench import bench_scans, single_thread
from lightnet.layers import GluParams, LayerParams, LnaParams, glu, lightnet_layer, lna_causal, lna_decay
from lightnet.layers import lna_noncausal, lna_summary, named_tensors, with_tensors
from lightnet.model import ModelConfig, build_model
from lightnet.numerics import Rng, Tensor, grad_check, ops
from lightnet.numerics.scan_ops import decay_matrix, linear_scan, prefix_softmax, state_scan
from lightnet.posenc import GridShape, LrpeConfig, TpeParams, lrpe_rotate, tpe_apply, tpe_dense_oracle
from lightnet.recurrence import RecurrenceSpec, is_recurrence_representable, scan, unroll
from lightnet.train import char_lm_config, grid2d_config, train_char_lm, train_grid2d

SEED = 20240


def report(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {number:2d}  {title}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def case_rng(number: int, i: int) -> Rng:
    return Rng(SEED).fork(f"criterion{number}/{i}")


# ---------------------------------------------------------------------------
# 1-2: recurrence
# ---------------------------------------------------------------------------


def test_criterion_01_roundtrip():
    t0 = time.perf_counter()
    worst, rejected = 0.0, 0
    for i in range(1000):
        r = case_rng(1, i)
        n = int(r.integers(1, 65))
        a = 1.0 - r.uniform(n, 0.0, 1.0)  # (0, 1]
        res = is_recurrence_representable(unroll(RecurrenceSpec(a)))
        if not res:
            rejected += 1
            continue
        # a_1 multiplies y_0 = 0 and never reaches the matrix, so only a_2.. are identifiable
        worst = max(worst, float(np.max(np.abs(res.a[1:] - a[1:]), initial=0.0)))
    elapsed = time.perf_counter() - t0
    ok = rejected == 0 and worst < 1e-12 and elapsed < 10.0
    report(1, "unroll/representability round-trip", ok,
           f"max error {worst:.2e} over 1000 cases, {rejected} rejected, {elapsed:.2f} s (limits 1e-12, 10 s)")


def test_criterion_02_scan_vs_unroll():
    worst = 0.0
    for i in range(1000):
        r = case_rng(2, i)
        n, d = int(r.integers(1, 65)), int(r.integers(1, 9))
        spec = RecurrenceSpec(r.uniform(n, 0.0, 1.0))
        x = r.normal((n, d))
        worst = max(worst, float(np.max(np.abs(scan(spec, x).data - unroll(spec).c @ x))))
    report(2, "scan vs unrolled matrix", worst < 1e-12, f"max error {worst:.2e} over 1000 cases (limit 1e-12)")


# ---------------------------------------------------------------------------
# 3: attention
# ---------------------------------------------------------------------------


def test_criterion_03_attention_oracle():
    worst = {"scan": 0.0, 1: 0.0, 7: 0.0, 16: 0.0, "n": 0.0}
    for i in range(200):
        r = case_rng(3, i)
        n, d = int(r.integers(1, 257)), int(r.integers(1, 33))
        inp = AttentionInputs(Tensor(r.normal((n, d))), Tensor(r.normal((n, d))), Tensor(r.normal((n, d))),
                              Tensor(r.uniform(n, 0.0, 1.0)))
        ref = masked_attention_oracle(inp).data
        worst["scan"] = max(worst["scan"], float(np.max(np.abs(causal_decay_scan(inp).data - ref))))
        for chunk in (1, 7, 16, "n"):
            size = n if chunk == "n" else min(chunk, n)
            err = float(np.max(np.abs(chunked_causal_scan(inp, size).data - ref)))
            worst[chunk] = max(worst[chunk], err)
    top = max(worst.values())
    detail = ", ".join(f"{'scan' if k == 'scan' else f'chunk {k}'} {v:.2e}" for k, v in worst.items())
    report(3, "causal scan and chunked scan vs masked oracle", top < 1e-10, f"{detail} over 200 cases (limit 1e-10)")


# ---------------------------------------------------------------------------
# 4-5: LNA
# ---------------------------------------------------------------------------


def _lna_case(r: Rng, max_n: int):
    heads = int(r.integers(1, 3))
    width = int(r.integers(1, 9))
    d = heads * width
    n = int(r.integers(1, max_n + 1))
    p = LnaParams.init(d, heads, r, zero_output=False)
    X = r.normal((n, d), std=float(r.uniform(1, 0.5, 3.0)[0]))
    return p, X


def test_criterion_04_softmax_identity():
    worst = 0.0
    for i in range(200):
        p, X = _lna_case(case_rng(4, i), 128)
        _, state = lna_causal(p, X, return_state=True)
        worst = max(worst, float(np.max(np.abs(state.data - lna_summary(p, X).data))))
    report(4, "causal final state equals Softmax(K)^T V", worst < 1e-10,
           f"max error {worst:.2e} over 200 cases, n <= 128 (limit 1e-10)")


def test_criterion_05_additive_correspondence():
    worst = 0.0
    for i in range(100):
        r = case_rng(5, i)
        p, X = _lna_case(r, 64)
        decay = 1.0 - lna_decay(p, X).data  # [h, n, w]
        k = X @ p.wk.data
        h, n, w = decay.shape
        for head in range(h):
            for j in range(w):
                a = RecurrenceSpec.additive(np.exp(k[:, head * w + j])).a
                worst = max(worst, float(np.max(np.abs(decay[head, :, j] - a))))
    report(5, "LNA decay equals additive recurrence with delta = exp(k)", worst < 1e-12,
           f"max error {worst:.2e} over 100 cases (limit 1e-12)")


# ---------------------------------------------------------------------------
# 6-7: positional encodings
# ---------------------------------------------------------------------------


def test_criterion_06_tpe_vs_dense():
    worst, sizes = 0.0, []
    for i in range(100):
        r = case_rng(6, i)
        k = 1 + i % 3
        while True:
            extents = tuple(int(x) for x in r.integers(1, {1: 513, 2: 33, 3: 9}[k], k))
            if int(np.prod(extents)) <= 512:
                break
        grid = GridShape(extents)
        d, e = int(r.integers(1, 9)), int(r.integers(1, 5))
        p = TpeParams(TpeParams.init(k, d, e, r).raw, Tensor(r.normal((k, d, e))))
        x = r.normal((grid.size, d))
        worst = max(worst, float(np.max(np.abs(tpe_apply(p, x, grid).data - tpe_dense_oracle(p, x, grid).data))))
        sizes.append(grid.size)
    report(6, "TPE scan vs dense Toeplitz", worst < 1e-10,
           f"max error {worst:.2e} over 100 grids, k in 1..3, N up to {max(sizes)} (limit 1e-10)")


def test_criterion_07_lrpe_relative():
    worst_rel, worst_shift = 0.0, 0.0
    setups = [(GridShape((4, 4)), LrpeConfig(8, 2)), (GridShape((2, 3, 4)), LrpeConfig(12, 3))]
    for i in range(1000):
        r = case_rng(7, i)
        grid, cfg = setups[i % 2]
        pos = grid.positions()
        q, k = r.normal(cfg.d), r.normal(cfg.d)
        n, m = pos[r.integers(0, grid.size)], pos[r.integers(0, grid.size)]

        def dot(a, b):
            return float(lrpe_rotate(cfg, q[None], positions=a[None]).data[0]
                         @ lrpe_rotate(cfg, k[None], positions=b[None]).data[0])

        lhs = dot(n, m)
        rhs = float(np.concatenate([q, np.zeros_like(q)]) @ lrpe_rotate(cfg, k[None], positions=(m - n)[None]).data[0])
        worst_rel = max(worst_rel, abs(lhs - rhs))
        # shift both points by the same offset, keeping them on the grid
        ext = np.array(grid.extents)
        lo, hi = -np.minimum(n, m), ext - 1 - np.maximum(n, m)
        shift = np.array([r.integers(a, b + 1) for a, b in zip(lo, hi)])
        worst_shift = max(worst_shift, abs(dot(n + shift, m + shift) - lhs))
    ok = worst_rel < 1e-10 and worst_shift < 1e-10
    report(7, "LRPE relative identity and translation invariance", ok,
           f"relative {worst_rel:.2e}, translation {worst_shift:.2e} over 1000 samples on 4x4 and 2x3x4 (limit 1e-10)")


# ---------------------------------------------------------------------------
# 8: gradients
# ---------------------------------------------------------------------------


def _gradient_cases(r: Rng):
    def t(shape, lo=-2.0, hi=2.0):
        return Tensor(r.uniform(shape, lo, hi), requires_grad=True)

    def proj(shape):
        return r.normal(shape)

    def w_sum(fn, out_shape):
        w = proj(out_shape)
        return lambda *xs: (fn(*xs) * w).sum()

    cases = {}
    a, b = t((3, 4)), t((3, 4))
    pos = t((3, 4), 0.5, 2.0)
    for name in ("add", "sub", "mul", "div"):
        cases[name] = (w_sum(lambda x, y, n=name: ops.elementwise(n, x, y), (3, 4)), [a, pos if name == "div" else b])
    for name in ("exp", "sigmoid", "swish", "neg", "square"):
        cases[name] = (w_sum(lambda x, n=name: ops.elementwise(n, x), (3, 4)), [a])
    for name in ("reciprocal", "log"):
        cases[name] = (w_sum(lambda x, n=name: ops.elementwise(n, x), (3, 4)), [pos])
    cases["broadcast add"] = (w_sum(lambda x, y: x + y, (3, 4)), [t((3, 4)), t((4,))])
    cases["matmul"] = (w_sum(ops.matmul, (2, 3, 5)), [t((2, 3, 4)), t((4, 5))])
    cases["matmul transposed"] = (w_sum(lambda x, y: ops.matmul(x, y, transpose_a=True), (4, 5)), [t((3, 4)), t((3, 5))])
    cases["sum/mean"] = (w_sum(lambda x: ops.sum(x, axis=0) + ops.mean(x, axis=0), (4,)), [t((3, 4))])
    cases["reshape/moveaxis"] = (w_sum(lambda x: ops.moveaxis(x.reshape(2, 3, 2), 0, 2), (3, 2, 2)), [t((3, 4))])
    cases["getitem"] = (w_sum(lambda x: x[np.array([0, 2, 2])], (3, 4)), [t((3, 4))])
    cases["concat/split"] = (w_sum(lambda x, y: ops.concat(ops.split(ops.concat([x, y], 0), 2, 0)[::-1], 0), (5, 4)),
                             [t((3, 4)), t((2, 4))])
    cases["softmax"] = (w_sum(lambda x: ops.softmax(x, axis=0), (3, 4)), [t((3, 4))])
    cases["log_softmax"] = (w_sum(ops.log_softmax, (3, 4)), [t((3, 4))])
    cases["rms_norm"] = (w_sum(ops.rms_norm, (3, 4)), [t((3, 4)), t((4,))])
    targets = np.array([0, 3, 1])
    cases["cross_entropy"] = (lambda x: ops.cross_entropy(x, targets), [t((3, 4))])
    cases["linear_scan"] = (w_sum(linear_scan, (6, 3)), [t((6, 3), 0.1, 0.9), t((6, 3))])
    cases["state_scan"] = (w_sum(state_scan, (6, 2)), [t((6, 3)), t((6, 3), 0.1, 0.9), t((6, 3)), t((6, 2))])
    wp, kp = proj((6, 3)), proj((6, 3))
    cases["prefix_softmax"] = (lambda x: (prefix_softmax(x)[0] * wp).sum() + (prefix_softmax(x)[1] * kp).sum(), [t((6, 3))])
    cases["decay_matrix"] = (w_sum(decay_matrix, (5, 5)), [t((5,), 0.1, 0.9)])

    def attn(fn):
        return w_sum(lambda q, k, v, lam: fn(AttentionInputs(q, k, v, lam)), (8, 3))

    qkv = [t((8, 3)), t((8, 3)), t((8, 3)), t((8,), 0.1, 0.9)]
    cases["causal_decay_scan"] = (attn(causal_decay_scan), qkv)
    cases["masked_attention_oracle"] = (attn(masked_attention_oracle), qkv)
    cases["chunked_causal_scan"] = (attn(lambda i: chunked_causal_scan(i, 3)), qkv)
    cases["two_scan_noncausal"] = (attn(lambda i: two_scan_noncausal(i, chunk=3)), qkv)
    cases["one_scan_noncausal"] = (w_sum(one_scan_noncausal, (8, 3)), qkv[:3])

    grid = GridShape((2, 3))
    tpe = TpeParams.init(2, 3, 2, r)
    cases["tpe_apply"] = (w_sum(lambda x, raw, g: tpe_apply(TpeParams(raw, g), x, grid), (6, 3)), [t((6, 3)), tpe.raw, tpe.gamma])
    cfg = LrpeConfig(4, 2)
    cases["lrpe_rotate"] = (w_sum(lambda x: lrpe_rotate(cfg, x, grid), (6, 8)), [t((6, 4))])

    g = GluParams.init(4, 5, r, zero_output=False)
    cases["glu"] = (w_sum(lambda x, wa, wb, wc: glu(GluParams(wa, wb, wc), x), (4, 4)), [t((4, 4)), g.wa, g.wb, g.wc])

    for causal in (True, False):
        lp = LayerParams.init(8, 2, r, zero_output=False)
        named = named_tensors(lp)
        keys = list(named)
        lcfg = LrpeConfig(4, 1)

        def layer_fn(x, *vals, lp=lp, keys=keys, causal=causal):
            return lightnet_layer(with_tensors(lp, dict(zip(keys, vals))), x, causal, lcfg)

        cases[f"lightnet_layer ({'causal' if causal else 'non-causal'}, LRPE)"] = (
            w_sum(layer_fn, (6, 8)), [t((6, 8)), *named.values()])

    unshared = LnaParams.init(8, 2, r, share_decay=False, zero_output=False)
    un_named = named_tensors(unshared)
    un_keys = list(un_named)
    cases["lna_causal (unshared decay)"] = (
        w_sum(lambda x, *vals: lna_causal(with_tensors(unshared, dict(zip(un_keys, vals))), x), (6, 8)),
        [t((6, 8)), *un_named.values()])
    shared = LnaParams.init(8, 2, r, zero_output=False)
    sh_named = named_tensors(shared)
    sh_keys = list(sh_named)
    cases["lna_noncausal"] = (
        w_sum(lambda x, *vals: lna_noncausal(with_tensors(shared, dict(zip(sh_keys, vals))), x), (6, 8)),
        [t((6, 8)), *sh_named.values()])

    model = build_model(ModelConfig(vocab=16, d=16, layers=1, heads=2, tpe_modes=2))
    params = {k: Tensor(v.data + (0.0 if k == "tpe.raw" else 0.3 * r.normal(v.shape)), requires_grad=True)
              for k, v in model.params.items()}
    names = list(params)
    tokens, nxt = r.integers(0, 16, 8), r.integers(0, 16, 8)
    cases["full model (n=8, d=16, L=1)"] = (
        lambda *vals: ops.cross_entropy(model.forward(tokens, dict(zip(names, vals))), nxt), list(params.values()))
    return cases


def test_criterion_08_gradients():
    t0 = time.perf_counter()
    errors = {name: grad_check(f, xs) for name, (f, xs) in _gradient_cases(case_rng(8, 0)).items()}
    elapsed = time.perf_counter() - t0
    worst_name = max(errors, key=errors.get)
    ok = errors[worst_name] < 1e-5 and elapsed < 60.0
    report(8, "gradient suite", ok,
           f"{len(errors)} checks, worst {errors[worst_name]:.2e} ({worst_name}), {elapsed:.1f} s (limits 1e-5, 60 s)")


# ---------------------------------------------------------------------------
# 9: permutation
# ---------------------------------------------------------------------------


def test_criterion_09_permutation():
    plain, with_lrpe, with_tpe = 0.0, np.inf, np.inf
    for i in range(20):
        r = case_rng(9, i)
        n, d = 32, 16
        X = r.normal((n, d))
        perm = r.permutation(n)
        while np.array_equal(perm, np.arange(n)):
            perm = r.permutation(n)
        p = LnaParams.init(d, 2, r, zero_output=False)
        plain = max(plain, float(np.max(np.abs(lna_noncausal(p, X[perm]).data - lna_noncausal(p, X).data[perm]))))

        grid = GridShape((4, 8))
        cfg = LrpeConfig(d // 2, 2)
        out = lna_noncausal(p, X, cfg, grid.positions()).data
        moved = lna_noncausal(p, X[perm], cfg, grid.positions()).data
        with_lrpe = min(with_lrpe, float(np.max(np.abs(moved - out[perm]))))

        tpe = TpeParams.init(2, d, 2, r)
        out = lna_noncausal(p, tpe_apply(tpe, X, grid)).data
        moved = lna_noncausal(p, tpe_apply(tpe, X[perm], grid)).data
        with_tpe = min(with_tpe, float(np.max(np.abs(moved - out[perm]))))
    ok = plain < 1e-12 and with_lrpe > 1e-3 and with_tpe > 1e-3
    report(9, "non-causal permutation property", ok,
           f"no encoding {plain:.2e} (limit 1e-12); smallest deviation with LRPE {with_lrpe:.2e}, "
           f"with TPE {with_tpe:.2e} (need > 1e-3), 20 random cases")


# ---------------------------------------------------------------------------
# 10: timing trend
# ---------------------------------------------------------------------------


def test_criterion_10_scan_timing_trend():
    with single_thread():
        records = bench_scans([4096, 16384], d=64, dtype="f32", reps=9, variants=("1-scan", "2-scan"))
    total = {(r.variant, r.n): r.forward_ms + r.backward_ms for r in records}
    fwd = {(r.variant, r.n): r.forward_ms for r in records}
    ratio = {n: total[("2-scan", n)] / total[("1-scan", n)] for n in (4096, 16384)}
    fwd_ratio = {n: fwd[("2-scan", n)] / fwd[("1-scan", n)] for n in (4096, 16384)}
    ok = ratio[4096] > 1.0 and ratio[16384] > ratio[4096]
    report(10, "2-scan/1-scan time ratio trend", ok,
           f"forward+backward ratio {ratio[4096]:.2f} at n=4096, {ratio[16384]:.2f} at n=16384 "
           f"(forward only {fwd_ratio[4096]:.2f}, {fwd_ratio[16384]:.2f}); median of 9 reps, one thread, d=64, f32")


# ---------------------------------------------------------------------------
# 11: training smoke tests
# ---------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_11_training(corpus_path):
    t0 = time.perf_counter()
    lm = train_char_lm(char_lm_config(), corpus_path, steps=500, threads=1)
    lm_s = time.perf_counter() - t0
    on = train_grid2d(grid2d_config(tpe=True, lrpe=True), steps=2000, threads=1)
    off = train_grid2d(grid2d_config(tpe=False, lrpe=False), steps=2000, threads=1)
    ok = lm.loss_ratio < 0.8 and lm_s < 600 and on.accuracy > 0.9 and 0.2 <= off.accuracy <= 0.35
    report(11, "training smoke tests", ok,
           f"char-LM loss {lm.initial_loss:.3f} -> {lm.final_loss:.3f} (ratio {lm.loss_ratio:.3f}, need < 0.8) "
           f"in {lm_s:.0f} s; grid2d accuracy {on.accuracy:.3f} with encodings (need > 0.9), "
           f"{off.accuracy:.3f} without (need 0.20-0.35)")
