import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secaggplus.errors import ConfigError
from secaggplus.modfield import (
    FieldError,
    FieldVector,
    dequantize,
    extend_with_weight,
    pop_weight_and_divide,
    quantize,
    vec_add_mod,
    vec_sub_mod,
)

C, T = 3.0, 65536


def test_quantize_examples():
    assert quantize([-3.0], C, T).tolist() == [0]
    assert quantize([5.0], C, T).tolist() == [65535]
    # (0 + 3) / 6 * 65535 = 32767.5 rounds half-up
    assert quantize([0.0], C, T).tolist() == [32768]


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_quantize_rejects_non_finite(bad):
    with pytest.raises(FieldError):
        quantize([0.0, bad], C, T)


@pytest.mark.parametrize("c,t", [(0.0, T), (-1.0, T), (C, 1)])
def test_invalid_ranges(c, t):
    with pytest.raises(ConfigError):
        quantize([0.0], c, t)


def test_dequantize_examples():
    assert dequantize([0], C, T).tolist() == [-3.0]
    assert dequantize([65535], C, T).tolist() == [3.0]
    with pytest.raises(FieldError):
        dequantize([65536], C, T)
    with pytest.raises(FieldError):
        dequantize([-1], C, T)


@pytest.mark.parametrize("c,t", [(3.0, 65536), (1.0, 2), (8.0, 1000), (0.5, 17)])
def test_roundtrip_grid(c, t):
    xs = np.linspace(-c, c, 200_001)
    err = np.abs(dequantize(quantize(xs, c, t), c, t) - xs)
    assert err.max() <= c / (t - 1) * (1 + 1e-9)


@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=50))
def test_quantize_monotone(xs):
    xs = np.sort(np.array(xs))
    q = quantize(xs, C, T)
    assert np.all(np.diff(q.astype(np.int64)) >= 0)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50))
def test_roundtrip_matches_clip(xs):
    xs = np.array(xs)
    back = dequantize(quantize(xs, C, T), C, T)
    assert np.all(np.abs(back - np.clip(xs, -C, C)) <= C / (T - 1) * (1 + 1e-9))


def test_add_sub_examples():
    a = FieldVector(np.array([1, 2], dtype=np.uint64), 5)
    b = FieldVector(np.array([4, 4], dtype=np.uint64), 5)
    assert vec_add_mod(a, b).tolist() == [0, 1]
    assert vec_sub_mod(FieldVector(np.array([0, 1], dtype=np.uint64), 5), b).tolist() == [1, 2]
    assert vec_add_mod(a, FieldVector.zeros(2, 5)) == a
    assert vec_sub_mod(a, a) == FieldVector.zeros(2, 5)


def test_mismatch_errors():
    a = FieldVector.zeros(2, 5)
    with pytest.raises(FieldError):
        vec_add_mod(a, FieldVector.zeros(3, 5))
    with pytest.raises(FieldError):
        vec_sub_mod(a, FieldVector.zeros(2, 7))
    with pytest.raises(FieldError):
        FieldVector(np.array([5], dtype=np.uint64), 5)
    with pytest.raises(FieldError):
        FieldVector.zeros(1, 1)


moduli = st.sampled_from([2, 5, 2**16, 1_000_003, 2**40, 2**62])


@st.composite
def vector_triples(draw):
    m = draw(moduli)
    n = draw(st.integers(1, 20))
    elems = st.lists(st.integers(0, m - 1), min_size=n, max_size=n)
    return tuple(FieldVector(np.array(draw(elems), dtype=np.uint64), m) for _ in range(3))


@given(vector_triples())
def test_group_laws(vs):
    a, b, c = vs
    m = a.modulus
    assert vec_add_mod(a, b) == vec_add_mod(b, a)
    assert vec_add_mod(vec_add_mod(a, b), c) == vec_add_mod(a, vec_add_mod(b, c))
    assert vec_sub_mod(vec_add_mod(a, b), b) == a
    # cross-check against Python big integers
    assert vec_add_mod(a, b).tolist() == [(x + y) % m for x, y in zip(a.tolist(), b.tolist())]
    assert vec_sub_mod(a, b).tolist() == [(x - y) % m for x, y in zip(a.tolist(), b.tolist())]


def test_extend_examples():
    assert extend_with_weight([2, 6], 1, 16, 10**6).tolist() == [1, 2, 6]
    assert extend_with_weight([2], 100, 16, 10**6).tolist() == [16, 32]
    assert extend_with_weight([3, 4], 3, 16, 10**6).tolist() == [3, 9, 12]


def test_extend_unit_factor_is_unweighted():
    q = np.array([7, 0, 65535])
    assert extend_with_weight(q, 50, 1, 2**20).tolist() == [1, 7, 0, 65535]


def test_pop_weight_examples():
    assert pop_weight_and_divide(FieldVector(np.array([4, 20], dtype=np.uint64), 100)).tolist() == [5.0]
    assert pop_weight_and_divide(FieldVector(np.array([1, 7, 9], dtype=np.uint64), 100)).tolist() == [7.0, 9.0]
    with pytest.raises(FieldError):
        pop_weight_and_divide(FieldVector(np.array([0, 3], dtype=np.uint64), 100))


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-C, C), st.integers(1, 8)), min_size=1, max_size=10))
def test_weighted_average_through_field(clients):
    m = 2**40
    agg = FieldVector.zeros(2, m)
    for x, w in clients:
        agg = vec_add_mod(agg, extend_with_weight(quantize([x], C, T), w, 8, m))
    got = dequantize(pop_weight_and_divide(agg), C, T)[0]
    want = sum(x * w for x, w in clients) / sum(w for _, w in clients)
    assert abs(got - want) <= 2 * C / (T - 1)
