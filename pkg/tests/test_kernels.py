import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from secaggplus import kernels
from secaggplus.kernels import available_backends

from conftest import gf_mul_slow, poly_eval_slow


def test_selected_backend_is_available():
    assert kernels.BACKEND in available_backends()


def test_pure_python_flag(monkeypatch):
    import importlib

    monkeypatch.setenv("SECAGGPLUS_PURE_PYTHON", "1")
    reloaded = importlib.reload(kernels)
    try:
        assert reloaded.BACKEND == "python"
    finally:
        monkeypatch.delenv("SECAGGPLUS_PURE_PYTHON")
        importlib.reload(kernels)


def test_gf_tables_against_slow_multiply():
    from secaggplus._pykernels import gf_mul

    a, b = np.meshgrid(np.arange(256), np.arange(256))
    fast = gf_mul(a.astype(np.uint8), b.astype(np.uint8))
    slow = np.array([[gf_mul_slow(x, y) for x in range(256)] for y in range(256)])
    assert np.array_equal(fast, slow)


def test_eval_shares_matches_polynomial(backend):
    rng = np.random.default_rng(1)
    secret = rng.bytes(8)
    coeffs = rng.bytes(8 * 3)
    out = backend.gf256_eval_shares(secret, coeffs, 7)
    for x in range(1, 8):
        for b in range(8):
            poly = [secret[b]] + [coeffs[r * 8 + b] for r in range(3)]
            assert out[(x - 1) * 8 + b] == poly_eval_slow(poly, x)


def test_interpolate_recovers_constant(backend):
    rng = np.random.default_rng(2)
    secret = rng.bytes(16)
    coeffs = rng.bytes(16 * 2)
    shares = backend.gf256_eval_shares(secret, coeffs, 5)
    for subset in itertools.combinations(range(5), 3):
        xs = bytes(i + 1 for i in subset)
        ys = b"".join(shares[i * 16 : (i + 1) * 16] for i in subset)
        assert backend.gf256_interpolate_zero(xs, ys) == secret


@pytest.mark.skipif(len(available_backends()) < 2, reason="compiled kernels not built")
@settings(max_examples=60, deadline=None)
@given(
    width=st.integers(1, 40),
    t=st.integers(1, 10),
    extra=st.integers(0, 10),
    data=st.data(),
)
def test_backends_bit_identical_gf(width, t, extra, data):
    py, cy = available_backends()["python"], available_backends()["cython"]
    n = t + extra
    secret = data.draw(st.binary(min_size=width, max_size=width))
    coeffs = data.draw(st.binary(min_size=width * (t - 1), max_size=width * (t - 1)))
    s_py = py.gf256_eval_shares(secret, coeffs, n)
    assert s_py == cy.gf256_eval_shares(secret, coeffs, n)
    idx = data.draw(st.permutations(range(n)))[:t]
    xs = bytes(i + 1 for i in idx)
    ys = b"".join(s_py[i * width : (i + 1) * width] for i in idx)
    assert py.gf256_interpolate_zero(xs, ys) == cy.gf256_interpolate_zero(xs, ys) == secret


@pytest.mark.skipif(len(available_backends()) < 2, reason="compiled kernels not built")
@settings(max_examples=60, deadline=None)
@given(
    m=st.sampled_from([2, 3, 2**16, 1_000_003, 2**40, 2**62]),
    length=st.integers(1, 64),
    sign=st.sampled_from([1, -1]),
    data=st.data(),
)
def test_backends_bit_identical_vectors(m, length, sign, data):
    py, cy = available_backends()["python"], available_backends()["cython"]
    stream = data.draw(st.binary(min_size=8 * length, max_size=8 * length))
    base = np.array(data.draw(st.lists(st.integers(0, m - 1), min_size=length, max_size=length)), dtype=np.uint64)
    other = np.array(data.draw(st.lists(st.integers(0, m - 1), min_size=length, max_size=length)), dtype=np.uint64)

    assert np.array_equal(py.reduce_stream(stream, m), cy.reduce_stream(stream, m))
    results = []
    for k in (py, cy):
        acc = base.copy()
        k.accumulate_stream(acc, stream, m, sign)
        k.add_mod_inplace(acc, other, m)
        k.sub_mod_inplace(acc, other, m)
        results.append(acc)
    assert np.array_equal(results[0], results[1])
    words = np.frombuffer(stream, dtype="<u8").tolist()
    want = [(b + sign * (w % m)) % m for b, w in zip(base.tolist(), words)]
    assert results[0].tolist() == want
