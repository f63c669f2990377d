# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint8_t, uint64_t, int64_t

cnp.import_array()

NAME = "cython"

cdef uint8_t GF_EXP[512]
cdef int GF_LOG[256]


cdef void _build_tables():
    cdef int i
    cdef int x = 1
    for i in range(255):
        GF_EXP[i] = <uint8_t>x
        GF_LOG[x] = i
        x ^= (x << 1) ^ (0x11B if x & 0x80 else 0)
        x &= 0xFF
    for i in range(255, 510):
        GF_EXP[i] = GF_EXP[i - 255]
    GF_EXP[510] = 0
    GF_EXP[511] = 0
    GF_LOG[0] = 0


_build_tables()


cdef inline uint8_t _mul(uint8_t a, uint8_t b) nogil:
    if a == 0 or b == 0:
        return 0
    return GF_EXP[GF_LOG[a] + GF_LOG[b]]


cdef inline uint8_t _inv(uint8_t a) nogil:
    return GF_EXP[255 - GF_LOG[a]]


def gf256_eval_shares(const uint8_t[::1] secret, const uint8_t[::1] coeffs, int n):
    cdef Py_ssize_t width = secret.shape[0]
    cdef Py_ssize_t degree = coeffs.shape[0] // width if width else 0
    out = bytearray(n * width)
    cdef uint8_t[::1] o = out
    cdef Py_ssize_t x, b, d
    cdef uint8_t acc, xb
    with nogil:
        for x in range(1, n + 1):
            xb = <uint8_t>x
            for b in range(width):
                acc = 0
                d = degree - 1
                while d >= 0:
                    acc = _mul(acc, xb) ^ coeffs[d * width + b]
                    d -= 1
                o[(x - 1) * width + b] = _mul(acc, xb) ^ secret[b]
    return bytes(out)


def gf256_interpolate_zero(const uint8_t[::1] xs, const uint8_t[::1] ys):
    cdef Py_ssize_t t = xs.shape[0]
    cdef Py_ssize_t width = ys.shape[0] // t
    out = bytearray(width)
    cdef uint8_t[::1] o = out
    cdef Py_ssize_t i, j, b
    cdef uint8_t num, den, coeff
    with nogil:
        for i in range(t):
            num = 1
            den = 1
            for j in range(t):
                if i != j:
                    num = _mul(num, xs[j])
                    den = _mul(den, xs[j] ^ xs[i])
            coeff = _mul(num, _inv(den))
            for b in range(width):
                o[b] ^= _mul(coeff, ys[i * width + b])
    return bytes(out)


def add_mod_inplace(uint64_t[::1] acc, const uint64_t[::1] other, uint64_t modulus):
    cdef Py_ssize_t i, size = acc.shape[0]
    cdef uint64_t v
    with nogil:
        for i in range(size):
            v = acc[i] + other[i]
            if v >= modulus:
                v -= modulus
            acc[i] = v


def sub_mod_inplace(uint64_t[::1] acc, const uint64_t[::1] other, uint64_t modulus):
    cdef Py_ssize_t i, size = acc.shape[0]
    with nogil:
        for i in range(size):
            if acc[i] >= other[i]:
                acc[i] = acc[i] - other[i]
            else:
                acc[i] = acc[i] + (modulus - other[i])


cdef inline uint64_t _load_le(const uint8_t[::1] s, Py_ssize_t off) nogil:
    cdef uint64_t v = 0
    cdef int k
    for k in range(7, -1, -1):
        v = (v << 8) | s[off + k]
    return v


def reduce_stream(const uint8_t[::1] stream, uint64_t modulus):
    cdef Py_ssize_t i, size = stream.shape[0] // 8
    out = np.empty(size, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    with nogil:
        for i in range(size):
            o[i] = _load_le(stream, 8 * i) % modulus
    return out


def accumulate_stream(uint64_t[::1] acc, const uint8_t[::1] stream, uint64_t modulus, int sign):
    cdef Py_ssize_t i, size = acc.shape[0]
    cdef uint64_t v
    with nogil:
        if sign >= 0:
            for i in range(size):
                v = acc[i] + _load_le(stream, 8 * i) % modulus
                if v >= modulus:
                    v -= modulus
                acc[i] = v
        else:
            for i in range(size):
                v = _load_le(stream, 8 * i) % modulus
                if acc[i] >= v:
                    acc[i] = acc[i] - v
                else:
                    acc[i] = acc[i] + (modulus - v)
