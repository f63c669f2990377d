"""Pure Python/numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature
and bit-identical results; ``secaggplus.kernels`` picks one at import time.
"""

from __future__ import annotations

import numpy as np

NAME = "python"


def _build_tables() -> tuple[np.ndarray, np.ndarray]:
    # GF(2^8) with the AES reduction polynomial x^8 + x^4 + x^3 + x + 1, generator 3.
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x ^= (x << 1) ^ (0x11B if x & 0x80 else 0)
        x &= 0xFF
    exp[255:510] = exp[0:255]
    return exp, log


GF_EXP, GF_LOG = _build_tables()
_EXP_LIST = GF_EXP.tolist()
_LOG_LIST = GF_LOG.tolist()


def gf_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.uint8)
    b = np.asarray(b, dtype=np.uint8)
    prod = GF_EXP[GF_LOG[a] + GF_LOG[b]]
    return np.where((a == 0) | (b == 0), np.uint8(0), prod).astype(np.uint8)


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(GF_EXP[255 - GF_LOG[a]])


def gf256_eval_shares(secret: bytes, coeffs: bytes, n: int) -> bytes:
    """Evaluate ``secret + c1*x + ... + c_{d}*x^d`` bytewise at x = 1..n.

    ``coeffs`` holds the d higher-order coefficient rows back to back, each
    ``len(secret)`` bytes long. Returns the n share rows concatenated.
    """
    width = len(secret)
    s = np.frombuffer(secret, dtype=np.uint8)
    c = np.frombuffer(coeffs, dtype=np.uint8).reshape(-1, width)
    xs = np.arange(1, n + 1, dtype=np.uint8)[:, None]
    acc = np.zeros((n, width), dtype=np.uint8)
    for row in c[::-1]:
        acc = gf_mul(acc, xs) ^ row
    acc = gf_mul(acc, xs) ^ s
    return acc.tobytes()


def _mul_int(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return _EXP_LIST[_LOG_LIST[a] + _LOG_LIST[b]]


def gf256_interpolate_zero(xs: bytes, ys: bytes) -> bytes:
    """Lagrange-interpolate the share rows ``ys`` (taken at points ``xs``) at zero."""
    t = len(xs)
    width = len(ys) // t
    rows = np.frombuffer(ys, dtype=np.uint8).reshape(t, width)
    out = np.zeros(width, dtype=np.uint8)
    for i, xi in enumerate(xs):
        num, den = 1, 1
        for j, xj in enumerate(xs):
            if i != j:
                num = _mul_int(num, xj)
                den = _mul_int(den, xj ^ xi)
        out ^= gf_mul(rows[i], _mul_int(num, gf_inv(den)))
    return out.tobytes()


def add_mod_inplace(acc: np.ndarray, other: np.ndarray, modulus: int) -> None:
    m = np.uint64(modulus)
    acc += other
    acc[acc >= m] -= m


def sub_mod_inplace(acc: np.ndarray, other: np.ndarray, modulus: int) -> None:
    m = np.uint64(modulus)
    borrow = acc < other
    acc -= other
    acc[borrow] += m


def reduce_stream(stream: bytes, modulus: int) -> np.ndarray:
    words = np.frombuffer(stream, dtype="<u8")
    return (words % np.uint64(modulus)).astype(np.uint64)


def accumulate_stream(acc: np.ndarray, stream: bytes, modulus: int, sign: int) -> None:
    """``acc += sign * (stream words mod m)`` elementwise, mod m, in place."""
    vals = reduce_stream(stream, modulus)
    if sign >= 0:
        add_mod_inplace(acc, vals, modulus)
    else:
        sub_mod_inplace(acc, vals, modulus)
