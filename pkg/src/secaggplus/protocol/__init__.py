"""Client and server state machines and the wire format they speak."""

from .client import ClientStage, SecAggClient
from .messages import (
    SERVER_ID,
    SecAggMessage,
    ShareKind,
    Stage,
    decode_message,
    encode_message,
)
from .server import RoundResult, SecAggServer, ServerStage

__all__ = [
    "SERVER_ID",
    "ClientStage",
    "RoundResult",
    "SecAggClient",
    "SecAggMessage",
    "SecAggServer",
    "ServerStage",
    "ShareKind",
    "Stage",
    "decode_message",
    "encode_message",
]
