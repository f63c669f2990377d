"""Exception hierarchy shared by every module."""

from __future__ import annotations

import enum
from typing import Any


class SecAggError(Exception):
    """Base class for all errors raised by this package."""


class ConfigErrorCode(enum.Enum):
    INVALID_CLIENT_COUNT = "invalid_client_count"
    INVALID_VECTOR_SIZE = "invalid_vector_size"
    INVALID_SHARE_NUM = "invalid_share_num"
    INVALID_THRESHOLD = "invalid_threshold"
    INVALID_CLIPPING_RANGE = "invalid_clipping_range"
    INVALID_TARGET_RANGE = "invalid_target_range"
    INVALID_MAX_WEIGHTS_FACTOR = "invalid_max_weights_factor"
    MOD_RANGE_TOO_SMALL = "mod_range_too_small"
    MOD_RANGE_TOO_LARGE = "mod_range_too_large"
    INVALID_MIN_NUM = "invalid_min_num"
    INVALID_MIN_FRAC = "invalid_min_frac"
    UNKNOWN_PARAMETER = "unknown_parameter"
    MALFORMED_VALUE = "malformed_value"


class ConfigError(SecAggError, ValueError):
    def __init__(self, code: ConfigErrorCode, message: str) -> None:
        super().__init__(f"{code.value}: {message}")
        self.code = code


class AuthenticationError(SecAggError):
    """AEAD decryption failed: wrong key or tampered ciphertext."""


class ProtocolError(SecAggError):
    """A party received something the protocol does not allow."""


class StateError(ProtocolError):
    """An operation was invoked in the wrong stage."""


class SecurityRefusal(ProtocolError):
    """A client refused a request that would leak both secrets of one peer."""


class WireFormatError(ProtocolError):
    """A frame or payload could not be decoded."""


class AbortReason(enum.IntEnum):
    INSUFFICIENT_SURVIVORS = 1
    INSUFFICIENT_SHARES = 2
    ZERO_WEIGHT = 3
    PROTOCOL_VIOLATION = 4


class RoundAborted(SecAggError):
    """The round stopped without producing an aggregate.

    ``stage`` is the stage barrier at which the abort happened. The simulator
    attaches ``report`` (survivor sets, meter, transcript) before re-raising.
    """

    def __init__(self, reason: AbortReason, stage: int, detail: str = "") -> None:
        super().__init__(f"round aborted at stage {stage}: {reason.name.lower()} {detail}".rstrip())
        self.reason = reason
        self.stage = stage
        self.detail = detail
        self.report: Any = None
