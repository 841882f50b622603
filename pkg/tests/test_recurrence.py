import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lightnet.numerics import Rng
from lightnet.recurrence import (
    CoefficientMatrix,
    RecurrenceSpec,
    additive_global_decay,
    is_recurrence_representable,
    scan,
    unroll,
)


def test_scan_prefix_sum():
    np.testing.assert_array_equal(scan(RecurrenceSpec(np.ones(3)), [1.0, 2.0, 3.0]).data, [1, 3, 6])


def test_scan_impulse_response():
    np.testing.assert_array_equal(scan(RecurrenceSpec(np.full(3, 0.5)), [1.0, 0.0, 0.0]).data, [1, 0.5, 0.25])


def test_scan_additive_example():
    spec = RecurrenceSpec.additive([1.0, 1.0, 1.0])
    np.testing.assert_allclose(spec.a, [0, 1 / 2, 2 / 3], rtol=0, atol=1e-15)
    # unrolled weights are s/t, so y_t = (1 + ... + t)/t * 1
    n = 3
    c = np.tril(np.arange(1, n + 1)[None, :] / np.arange(1, n + 1)[:, None])
    expected = c @ np.ones(3)
    np.testing.assert_allclose(scan(spec, np.ones(3)).data, expected, rtol=0, atol=1e-15)
    np.testing.assert_allclose(expected, [1, 1.5, 2])


def test_scan_length_mismatch():
    with pytest.raises(ValueError, match="3 steps"):
        scan(RecurrenceSpec(np.ones(3)), np.ones(4))


def test_unroll_examples():
    c = unroll(RecurrenceSpec([1.0, 0.5, 0.25])).c
    np.testing.assert_array_equal(c, [[1, 0, 0], [0.5, 1, 0], [0.125, 0.25, 1]])
    np.testing.assert_array_equal(unroll(RecurrenceSpec(np.ones(4))).c, np.tril(np.ones((4, 4))))
    np.testing.assert_array_equal(unroll(RecurrenceSpec([0.3])).c, [[1.0]])


def test_unroll_handles_zero_decay():
    c = unroll(RecurrenceSpec([0.7, 0.0, 0.5])).c
    np.testing.assert_array_equal(c, [[1, 0, 0], [0, 1, 0], [0, 0.5, 1]])


def test_representability_counterexample():
    c = np.array([[1, 0, 0], [0.5, 1, 0], [0.3, 0.5, 1]])
    res = is_recurrence_representable(CoefficientMatrix(c))
    assert not res
    assert res.a is None
    assert abs(res.max_error - 0.05) < 1e-15


def test_representability_identity():
    res = is_recurrence_representable(np.eye(5))
    assert res
    np.testing.assert_array_equal(res.a, np.zeros(5))


def test_representability_rejects_upper_entries_and_diagonal():
    c = unroll(RecurrenceSpec([0, 0.5, 0.5])).c.copy()
    c[0, 2] = 1e-3
    assert not is_recurrence_representable(c)
    c = unroll(RecurrenceSpec([0, 0.5, 0.5])).c.copy()
    c[1, 1] = 1.1
    assert not is_recurrence_representable(c)


def test_representability_non_square():
    with pytest.raises(ValueError):
        is_recurrence_representable(np.ones((2, 3)))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 64), seed=st.integers(0, 2**32 - 1))
def test_roundtrip_recovers_coefficients(n, seed):
    a = Rng(seed).uniform(n, 1e-3, 1.0)
    a[0] = 0.0
    res = is_recurrence_representable(unroll(RecurrenceSpec(a)))
    assert res
    assert np.max(np.abs(res.a - a)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 64), d=st.integers(1, 8), seed=st.integers(0, 2**32 - 1))
def test_scan_equals_unroll(n, d, seed):
    r = Rng(seed)
    spec = RecurrenceSpec(r.uniform(n, 0, 1))
    x = r.normal((n, d))
    assert np.max(np.abs(scan(spec, x).data - unroll(spec).c @ x)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 2**32 - 1))
def test_additive_and_multiplicative_agree(n, seed):
    g = np.cumsum(Rng(seed).uniform(n, 0.01, 2.0))
    add = RecurrenceSpec.from_score(g, "additive")
    mul = RecurrenceSpec.from_score(g, "multiplicative")
    assert np.max(np.abs(add.a[1:] - mul.a[1:]), initial=0.0) < 1e-12
    assert add.a[0] == 0.0


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 2**32 - 1))
def test_generated_bounds(n, seed):
    r = Rng(seed)
    delta = r.uniform(n, 0, 3)
    delta[0] += 1e-3
    delta[r.uniform(n) < 0.3] = 0.0
    delta[0] = max(delta[0], 1e-3)
    for spec in (RecurrenceSpec.additive(delta), RecurrenceSpec.multiplicative(r.uniform(n, 1e-6, 1.0))):
        assert np.all(spec.a >= 0) and np.all(spec.a <= 1)


def test_generator_validation():
    with pytest.raises(ValueError):
        RecurrenceSpec.multiplicative([0.5, 0.0])
    with pytest.raises(ValueError):
        RecurrenceSpec.multiplicative([1.5])
    with pytest.raises(ValueError):
        RecurrenceSpec.additive([0.0, 1.0])
    with pytest.raises(ValueError):
        RecurrenceSpec.additive([1.0, -1.0])


def test_multiplicative_keeps_first_rate():
    spec = RecurrenceSpec.multiplicative([0.4, 0.9])
    np.testing.assert_array_equal(spec.a, [0.4, 0.9])
    assert spec.kind == "multiplicative"


def test_additive_global_decay_examples():
    assert additive_global_decay([1, 1, 1, 1], 3) == 0.5
    assert additive_global_decay([2, 5, 1], 1) == 0.0
    assert additive_global_decay([0, 0, 0, 1], 4) == 0.0


def test_additive_global_decay_errors():
    with pytest.raises(ValueError):
        additive_global_decay([0, 0], 1)
    with pytest.raises(IndexError):
        additive_global_decay([1, 1], 3)
