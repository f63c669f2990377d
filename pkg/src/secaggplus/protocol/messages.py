"""Wire messages and their binary encoding.

Frame: ``[u8 stage][u32 BE sender][u64 BE payload_len][payload]``. Byte strings
inside payloads carry a u16 BE length prefix, sequences a u32 BE count, ids are
u32 BE and field vectors are u64 LE per element. The same stage tag is used in
both directions; the payload schema is picked by whether the sender is the
server.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from ..config import SecAggConfig
from ..errors import AbortReason, WireFormatError

SERVER_ID = 0xFFFFFFFF

_HEADER = struct.Struct(">BIQ")
_SETUP = struct.Struct(">IIIIdQQQId")
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")


class Stage(enum.IntEnum):
    SETUP = 0
    ASK_KEYS = 1
    SHARE_KEYS = 2
    ASK_VECTORS = 3
    UNMASK = 4
    ABORT = 255


class ShareKind(enum.IntEnum):
    SEED = 0
    MASK_KEY = 1


@dataclass(frozen=True)
class SetupPayload:
    config: SecAggConfig


@dataclass(frozen=True)
class PublicKeysPayload:
    mask_key: bytes
    enc_key: bytes


@dataclass(frozen=True)
class NeighborKeysPayload:
    keys: dict[int, tuple[bytes, bytes]]


@dataclass(frozen=True)
class ShareKeysPayload:
    """Client -> server: ciphertexts keyed by destination id."""

    ciphertexts: dict[int, bytes]


@dataclass(frozen=True)
class RoutedSharesPayload:
    """Server -> client: ciphertexts keyed by origin id."""

    ciphertexts: dict[int, bytes]


@dataclass(frozen=True, eq=False)
class MaskedVectorPayload:
    values: np.ndarray

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MaskedVectorPayload) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class UnmaskRequestPayload:
    seed_ids: tuple[int, ...]
    key_ids: tuple[int, ...]


@dataclass(frozen=True)
class UnmaskReplyPayload:
    shares: list[tuple[int, ShareKind, bytes]] = field(default_factory=list)


@dataclass(frozen=True)
class AbortPayload:
    reason: AbortReason
    stage: int


Payload = Union[
    SetupPayload,
    PublicKeysPayload,
    NeighborKeysPayload,
    ShareKeysPayload,
    RoutedSharesPayload,
    MaskedVectorPayload,
    UnmaskRequestPayload,
    UnmaskReplyPayload,
    AbortPayload,
]


@dataclass(frozen=True)
class SecAggMessage:
    stage: Stage
    sender_id: int
    payload: Payload

    @property
    def from_server(self) -> bool:
        return self.sender_id == SERVER_ID


# ---------------------------------------------------------------------------
# primitive codecs
# ---------------------------------------------------------------------------


def _pack_bytes(data: bytes) -> bytes:
    if len(data) > 0xFFFF:
        raise WireFormatError("byte string longer than 65535")
    return _U16.pack(len(data)) + data


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WireFormatError("truncated payload")
        out = bytes(self.data[self.pos : self.pos + n])
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def blob(self) -> bytes:
        return self.take(_U16.unpack(self.take(2))[0])

    def done(self) -> None:
        if self.pos != len(self.data):
            raise WireFormatError(f"{len(self.data) - self.pos} trailing bytes in payload")


def _encode_config(cfg: SecAggConfig) -> bytes:
    return _SETUP.pack(
        cfg.n,
        cfg.l,
        cfg.share_num,
        cfg.threshold,
        cfg.clipping_range,
        cfg.target_range,
        cfg.max_weights_factor,
        cfg.mod_range,
        cfg.min_num or 0,
        cfg.min_frac or 0.0,
    )


def _decode_config(data: bytes) -> SecAggConfig:
    if len(data) != _SETUP.size:
        raise WireFormatError("bad setup payload size")
    n, l, share_num, threshold, c, t, mwf, m, min_num, min_frac = _SETUP.unpack(data)
    return SecAggConfig(
        n=n,
        l=l,
        share_num=share_num,
        threshold=threshold,
        clipping_range=c,
        target_range=t,
        max_weights_factor=mwf,
        mod_range=m,
        min_num=min_num or None,
        min_frac=min_frac or None,
    )


def _encode_id_blobs(items: dict[int, bytes]) -> bytes:
    parts = [_U32.pack(len(items))]
    for ident in sorted(items):
        parts.append(_U32.pack(ident) + _pack_bytes(items[ident]))
    return b"".join(parts)


def _decode_id_blobs(r: _Reader) -> dict[int, bytes]:
    out = {}
    for _ in range(r.u32()):
        ident = r.u32()
        out[ident] = r.blob()
    return out


def _encode_ids(ids: tuple[int, ...]) -> bytes:
    return _U32.pack(len(ids)) + b"".join(_U32.pack(i) for i in ids)


def _decode_ids(r: _Reader) -> tuple[int, ...]:
    return tuple(r.u32() for _ in range(r.u32()))


# ---------------------------------------------------------------------------
# payloads
# ---------------------------------------------------------------------------


def encode_payload(payload: Payload) -> bytes:
    if isinstance(payload, SetupPayload):
        return _encode_config(payload.config)
    if isinstance(payload, PublicKeysPayload):
        return _pack_bytes(payload.mask_key) + _pack_bytes(payload.enc_key)
    if isinstance(payload, NeighborKeysPayload):
        parts = [_U32.pack(len(payload.keys))]
        for ident in sorted(payload.keys):
            mask_key, enc_key = payload.keys[ident]
            parts.append(_U32.pack(ident) + _pack_bytes(mask_key) + _pack_bytes(enc_key))
        return b"".join(parts)
    if isinstance(payload, (ShareKeysPayload, RoutedSharesPayload)):
        return _encode_id_blobs(payload.ciphertexts)
    if isinstance(payload, MaskedVectorPayload):
        return np.ascontiguousarray(payload.values, dtype="<u8").tobytes()
    if isinstance(payload, UnmaskRequestPayload):
        return _encode_ids(payload.seed_ids) + _encode_ids(payload.key_ids)
    if isinstance(payload, UnmaskReplyPayload):
        parts = [_U32.pack(len(payload.shares))]
        for origin, kind, share in payload.shares:
            parts.append(_U32.pack(origin) + bytes([kind]) + _pack_bytes(share))
        return b"".join(parts)
    if isinstance(payload, AbortPayload):
        return bytes([payload.reason, payload.stage])
    raise WireFormatError(f"cannot encode {type(payload).__name__}")


def decode_payload(stage: Stage, from_server: bool, data: bytes) -> Payload:
    if stage == Stage.SETUP and from_server:
        return SetupPayload(_decode_config(data))
    if stage == Stage.ASK_VECTORS and not from_server:
        if len(data) % 8:
            raise WireFormatError("vector payload not a multiple of 8 bytes")
        return MaskedVectorPayload(np.frombuffer(data, dtype="<u8").astype(np.uint64))
    r = _Reader(data)
    payload: Payload
    if stage == Stage.ASK_KEYS and not from_server:
        payload = PublicKeysPayload(r.blob(), r.blob())
    elif stage == Stage.SHARE_KEYS and from_server:
        keys = {}
        for _ in range(r.u32()):
            ident = r.u32()
            keys[ident] = (r.blob(), r.blob())
        payload = NeighborKeysPayload(keys)
    elif stage == Stage.SHARE_KEYS:
        payload = ShareKeysPayload(_decode_id_blobs(r))
    elif stage == Stage.ASK_VECTORS and from_server:
        payload = RoutedSharesPayload(_decode_id_blobs(r))
    elif stage == Stage.UNMASK and from_server:
        payload = UnmaskRequestPayload(_decode_ids(r), _decode_ids(r))
    elif stage == Stage.UNMASK:
        shares = []
        for _ in range(r.u32()):
            origin = r.u32()
            try:
                kind = ShareKind(r.u8())
            except ValueError:
                raise WireFormatError("unknown share kind") from None
            shares.append((origin, kind, r.blob()))
        payload = UnmaskReplyPayload(shares)
    elif stage == Stage.ABORT:
        try:
            payload = AbortPayload(AbortReason(r.u8()), r.u8())
        except ValueError:
            raise WireFormatError("unknown abort reason") from None
    else:
        direction = "server" if from_server else "client"
        raise WireFormatError(f"no {stage.name} message from a {direction}")
    r.done()
    return payload


def encode_message(msg: SecAggMessage) -> bytes:
    body = encode_payload(msg.payload)
    return _HEADER.pack(int(msg.stage), msg.sender_id, len(body)) + body


def decode_message(frame: bytes) -> SecAggMessage:
    if len(frame) < _HEADER.size:
        raise WireFormatError("frame shorter than header")
    tag, sender, length = _HEADER.unpack_from(frame)
    if len(frame) != _HEADER.size + length:
        raise WireFormatError(f"payload length {length} does not match frame size {len(frame)}")
    try:
        stage = Stage(tag)
    except ValueError:
        raise WireFormatError(f"unknown stage tag {tag}") from None
    payload = decode_payload(stage, sender == SERVER_ID, frame[_HEADER.size :])
    return SecAggMessage(stage, sender, payload)


HEADER_BYTES = _HEADER.size
