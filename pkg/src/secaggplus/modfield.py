"""Quantization and modular vector arithmetic.

Model vectors are clipped to ``[-c, c]`` and mapped onto ``[0, T-1]`` so they
can be masked in ``Z_m``. A client's weight is prepended to its (weighted)
vector so the server can recover a weighted mean from the masked sum.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .errors import ConfigError, ConfigErrorCode, SecAggError

MAX_MODULUS = 1 << 62


class FieldError(SecAggError, ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FieldVector:
    """A vector of residues modulo ``modulus``, stored as uint64."""

    values: np.ndarray
    modulus: int

    def __post_init__(self) -> None:
        if not 2 <= self.modulus <= MAX_MODULUS:
            raise FieldError(f"modulus must be in [2, 2^62], got {self.modulus}")
        arr = np.asarray(self.values)
        if arr.ndim != 1:
            raise FieldError("field vector must be one-dimensional")
        if arr.dtype != np.uint64:
            if arr.size and (arr.min() < 0):
                raise FieldError("field elements must be non-negative")
            arr = arr.astype(np.uint64)
        if arr.size and int(arr.max()) >= self.modulus:
            raise FieldError("field element not reduced modulo the modulus")
        object.__setattr__(self, "values", np.ascontiguousarray(arr))

    @classmethod
    def zeros(cls, length: int, modulus: int) -> FieldVector:
        return cls(np.zeros(length, dtype=np.uint64), modulus)

    def __len__(self) -> int:
        return int(self.values.shape[0])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, FieldVector):
            return NotImplemented
        return self.modulus == other.modulus and np.array_equal(self.values, other.values)

    def __repr__(self) -> str:
        head = self.values[:6].tolist()
        more = ", ..." if len(self) > 6 else ""
        return f"FieldVector({head}{more}, modulus={self.modulus})"

    def tolist(self) -> list[int]:
        return [int(v) for v in self.values]

    def copy(self) -> FieldVector:
        return FieldVector(self.values.copy(), self.modulus)


def _check_ranges(clipping_range: float, target_range: int) -> None:
    if not (clipping_range > 0 and np.isfinite(clipping_range)):
        raise ConfigError(ConfigErrorCode.INVALID_CLIPPING_RANGE, f"clipping_range must be > 0, got {clipping_range}")
    if int(target_range) != target_range or target_range < 2:
        raise ConfigError(ConfigErrorCode.INVALID_TARGET_RANGE, f"target_range must be an integer >= 2, got {target_range}")


def quantize(x: Sequence[float] | np.ndarray, clipping_range: float, target_range: int) -> np.ndarray:
    """Clip to ``[-c, c]`` and map affinely onto ``[0, T-1]``, rounding half up."""
    _check_ranges(clipping_range, target_range)
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FieldError("cannot quantize non-finite values")
    c = float(clipping_range)
    clipped = np.clip(arr, -c, c)
    scaled = (clipped + c) * (target_range - 1) / (2 * c)
    q = np.floor(scaled + 0.5).astype(np.int64)
    return np.clip(q, 0, target_range - 1)


def dequantize(q: Sequence[float] | np.ndarray, clipping_range: float, target_range: int) -> np.ndarray:
    """Inverse affine map. Accepts fractional values, e.g. a quotient of sums."""
    _check_ranges(clipping_range, target_range)
    arr = np.asarray(q, dtype=np.float64)
    if arr.size and (arr.min() < 0 or arr.max() > target_range - 1):
        raise FieldError(f"quantized value outside [0, {target_range - 1}]")
    c = float(clipping_range)
    return arr * (2 * c) / (target_range - 1) - c


def _check_compatible(a: FieldVector, b: FieldVector) -> None:
    if a.modulus != b.modulus:
        raise FieldError(f"modulus mismatch: {a.modulus} != {b.modulus}")
    if len(a) != len(b):
        raise FieldError(f"length mismatch: {len(a)} != {len(b)}")


def vec_add_mod(a: FieldVector, b: FieldVector) -> FieldVector:
    _check_compatible(a, b)
    out = a.values.copy()
    kernels.add_mod_inplace(out, b.values, a.modulus)
    return FieldVector(out, a.modulus)


def vec_sub_mod(a: FieldVector, b: FieldVector) -> FieldVector:
    _check_compatible(a, b)
    out = a.values.copy()
    kernels.sub_mod_inplace(out, b.values, a.modulus)
    return FieldVector(out, a.modulus)


def effective_weight(weight: int, max_weights_factor: int) -> int:
    if weight < 1:
        raise FieldError(f"weight must be >= 1, got {weight}")
    return min(int(weight), int(max_weights_factor))


def extend_with_weight(
    q: Sequence[int] | np.ndarray, weight: int, max_weights_factor: int, modulus: int
) -> FieldVector:
    """Return ``[w, w*q0, ..., w*q_{l-1}] mod m`` with ``w = min(weight, max_weights_factor)``."""
    w = effective_weight(weight, max_weights_factor)
    q = np.asarray(q, dtype=np.uint64)
    out = np.empty(q.shape[0] + 1, dtype=np.uint64)
    out[0] = w % modulus
    # q < T and w <= max_weights_factor, so the product stays far below 2^64
    out[1:] = (q * np.uint64(w)) % np.uint64(modulus)
    return FieldVector(out, modulus)


def pop_weight_and_divide(agg: FieldVector) -> np.ndarray:
    """Split off the weight-sum slot and divide the remaining sums by it."""
    if len(agg) < 2:
        raise FieldError("aggregate must hold a weight slot and at least one element")
    total = int(agg.values[0])
    if total == 0:
        raise FieldError("aggregate weight sum is zero")
    return agg.values[1:].astype(np.float64) / float(total)
