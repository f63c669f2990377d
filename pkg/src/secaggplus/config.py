"""Protocol parameters: defaults, validation and the key=value file format."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping, TypedDict

from .errors import ConfigError, ConfigErrorCode

MAX_MOD_RANGE = 1 << 40
MAX_SHARE_NUM = 255

DEFAULT_SHARE_NUM = 51
DEFAULT_CLIPPING_RANGE = 3.0
DEFAULT_TARGET_RANGE = 1 << 16
DEFAULT_MAX_WEIGHTS_FACTOR = 1
DEFAULT_MIN_FRAC = 0.9


class SecAggParams(TypedDict, total=False):
    min_num: int
    min_frac: float
    share_num: int
    threshold: int
    clipping_range: float
    target_range: int
    max_weights_factor: int
    mod_range: int


_INT_PARAMS = ("min_num", "share_num", "threshold", "target_range", "max_weights_factor", "mod_range")
_FLOAT_PARAMS = ("min_frac", "clipping_range")
PARAM_NAMES = _INT_PARAMS + _FLOAT_PARAMS


@dataclass(frozen=True)
class SecAggConfig:
    n: int
    l: int
    share_num: int
    threshold: int
    clipping_range: float
    target_range: int
    max_weights_factor: int
    mod_range: int
    min_num: int | None = None
    min_frac: float | None = None

    @property
    def k(self) -> int:
        return self.share_num

    @property
    def min_clients(self) -> int:
        return min_clients_limit(self)

    def to_params(self) -> SecAggParams:
        raw = asdict(self)
        del raw["n"], raw["l"]
        return {key: value for key, value in raw.items() if value is not None}  # type: ignore[return-value]


def _next_pow2(x: int) -> int:
    return 1 << max(1, (x - 1).bit_length())


def fill_defaults(params: Mapping[str, Any], n: int, l: int) -> SecAggParams:
    """Fill every parameter the caller left out; provided ones are kept as is."""
    if n < 1:
        raise ConfigError(ConfigErrorCode.INVALID_CLIENT_COUNT, f"n must be >= 1, got {n}")
    if l < 1:
        raise ConfigError(ConfigErrorCode.INVALID_VECTOR_SIZE, f"l must be >= 1, got {l}")
    out: dict[str, Any] = {k: v for k, v in params.items() if v is not None}
    out.setdefault("share_num", min(n, DEFAULT_SHARE_NUM))
    if "threshold" not in out:
        share_num = int(out["share_num"])
        out["threshold"] = min(math.ceil(share_num / 2) + 1, share_num)
    out.setdefault("clipping_range", DEFAULT_CLIPPING_RANGE)
    out.setdefault("target_range", DEFAULT_TARGET_RANGE)
    out.setdefault("max_weights_factor", DEFAULT_MAX_WEIGHTS_FACTOR)
    if "mod_range" not in out:
        out["mod_range"] = _next_pow2(int(out["max_weights_factor"]) * int(out["target_range"]) * n)
    if "min_num" not in out and "min_frac" not in out:
        out["min_frac"] = DEFAULT_MIN_FRAC
    return out  # type: ignore[return-value]


def _as_int(name: str, value: Any) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise ConfigError(ConfigErrorCode.MALFORMED_VALUE, f"{name} must be an integer, got {value!r}")
    return int(value)


def _as_float(name: str, value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(ConfigErrorCode.MALFORMED_VALUE, f"{name} must be a number, got {value!r}")
    return float(value)


def validate(params: Mapping[str, Any], n: int, l: int) -> SecAggConfig:
    """Fill defaults, check every constraint and return a frozen config.

    Raises ConfigError naming the first violated constraint.
    """
    unknown = sorted(set(params) - set(PARAM_NAMES))
    if unknown:
        raise ConfigError(ConfigErrorCode.UNKNOWN_PARAMETER, f"unknown parameters {unknown}")
    p = fill_defaults(params, n, l)

    share_num = _as_int("share_num", p["share_num"])
    if not 1 <= share_num <= min(n, MAX_SHARE_NUM):
        raise ConfigError(
            ConfigErrorCode.INVALID_SHARE_NUM,
            f"share_num must be in [1, min(n={n}, {MAX_SHARE_NUM})], got {share_num}",
        )
    if share_num < n and share_num % 2 == 0:
        warnings.warn(
            f"share_num={share_num} is even and below n={n}; using {share_num + 1} for a symmetric neighborhood",
            stacklevel=2,
        )
        share_num += 1

    threshold = _as_int("threshold", p["threshold"])
    if not 1 <= threshold <= share_num:
        raise ConfigError(
            ConfigErrorCode.INVALID_THRESHOLD,
            f"threshold must be in [1, share_num={share_num}], got {threshold}",
        )

    clipping_range = _as_float("clipping_range", p["clipping_range"])
    if not (clipping_range > 0 and math.isfinite(clipping_range)):
        raise ConfigError(ConfigErrorCode.INVALID_CLIPPING_RANGE, f"clipping_range must be > 0, got {clipping_range}")

    target_range = _as_int("target_range", p["target_range"])
    if target_range < 2:
        raise ConfigError(ConfigErrorCode.INVALID_TARGET_RANGE, f"target_range must be >= 2, got {target_range}")

    mwf = _as_int("max_weights_factor", p["max_weights_factor"])
    if mwf < 1:
        raise ConfigError(ConfigErrorCode.INVALID_MAX_WEIGHTS_FACTOR, f"max_weights_factor must be >= 1, got {mwf}")

    mod_range = _as_int("mod_range", p["mod_range"])
    capacity = mwf * target_range * n
    if mod_range < capacity:
        raise ConfigError(
            ConfigErrorCode.MOD_RANGE_TOO_SMALL,
            f"mod_range={mod_range} < max_weights_factor*target_range*n = {mwf}*{target_range}*{n} = {capacity}",
        )
    if mod_range > MAX_MOD_RANGE:
        raise ConfigError(ConfigErrorCode.MOD_RANGE_TOO_LARGE, f"mod_range must be <= 2^40, got {mod_range}")

    min_num = p.get("min_num")
    if min_num is not None:
        min_num = _as_int("min_num", min_num)
        if min_num < 1:
            raise ConfigError(ConfigErrorCode.INVALID_MIN_NUM, f"min_num must be >= 1, got {min_num}")
    min_frac = p.get("min_frac")
    if min_frac is not None:
        min_frac = _as_float("min_frac", min_frac)
        if not 0 < min_frac <= 1:
            raise ConfigError(ConfigErrorCode.INVALID_MIN_FRAC, f"min_frac must be in (0, 1], got {min_frac}")

    return SecAggConfig(
        n=n,
        l=l,
        share_num=share_num,
        threshold=threshold,
        clipping_range=clipping_range,
        target_range=target_range,
        max_weights_factor=mwf,
        mod_range=mod_range,
        min_num=min_num,
        min_frac=min_frac,
    )


def min_clients_limit(config: SecAggConfig) -> int:
    """Fewest clients allowed at any stage barrier.

    With both ``min_num`` and ``min_frac`` set the smaller requirement wins;
    the result is never below ``threshold``.
    """
    candidates = []
    if config.min_num is not None:
        candidates.append(config.min_num)
    if config.min_frac is not None:
        # guard against 0.9 * 10 = 9.000000000000002
        candidates.append(math.ceil(config.min_frac * config.n - 1e-9))
    limit = min(candidates) if candidates else config.threshold
    return max(limit, config.threshold)


def parse_param(name: str, text: str) -> int | float:
    if name not in PARAM_NAMES:
        raise ConfigError(ConfigErrorCode.UNKNOWN_PARAMETER, f"unknown parameter {name!r}")
    try:
        if name in _INT_PARAMS:
            return int(text.replace("_", ""), 0)
        return float(text)
    except ValueError:
        raise ConfigError(ConfigErrorCode.MALFORMED_VALUE, f"cannot parse {name}={text!r}") from None


def load_params_file(path: str | Path) -> SecAggParams:
    """Read ``key=value`` lines; blank lines and ``#`` comments are ignored."""
    params: dict[str, Any] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(ConfigErrorCode.MALFORMED_VALUE, f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        params[key] = parse_param(key, value)
    return params  # type: ignore[return-value]


def dump_params(params: Mapping[str, Any]) -> str:
    return "".join(f"{key}={params[key]!r}\n" for key in PARAM_NAMES if key in params)
