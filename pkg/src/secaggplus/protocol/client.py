"""Client side of the five-stage round."""

from __future__ import annotations

import enum
import struct
from typing import Sequence

import numpy as np

from .. import crypto, masking, modfield
from ..config import SecAggConfig
from ..errors import AuthenticationError, ProtocolError, SecurityRefusal, StateError
from ..masking import NeighborGraph, OpCounter
from .messages import (
    AbortPayload,
    MaskedVectorPayload,
    NeighborKeysPayload,
    PublicKeysPayload,
    RoutedSharesPayload,
    SecAggMessage,
    SetupPayload,
    ShareKeysPayload,
    ShareKind,
    Stage,
    UnmaskReplyPayload,
    UnmaskRequestPayload,
)

_IDS = struct.Struct(">II")


class ClientStage(enum.IntEnum):
    NEW = 0
    CONFIGURED = 1
    KEYS_SENT = 2
    SHARES_SENT = 3
    VECTOR_SENT = 4
    DONE = 5
    ABORTED = 6


def pack_share_pair(origin: int, dest: int, key_share: bytes, seed_share: bytes) -> bytes:
    return (
        _IDS.pack(origin, dest)
        + struct.pack(">H", len(key_share))
        + key_share
        + struct.pack(">H", len(seed_share))
        + seed_share
    )


def unpack_share_pair(data: bytes) -> tuple[int, int, bytes, bytes]:
    try:
        origin, dest = _IDS.unpack_from(data)
        pos = _IDS.size
        (klen,) = struct.unpack_from(">H", data, pos)
        key_share = data[pos + 2 : pos + 2 + klen]
        pos += 2 + klen
        (slen,) = struct.unpack_from(">H", data, pos)
        seed_share = data[pos + 2 : pos + 2 + slen]
        pos += 2 + slen
    except struct.error:
        raise ProtocolError("malformed share pair") from None
    if pos != len(data) or len(key_share) != klen or len(seed_share) != slen:
        raise ProtocolError("malformed share pair")
    return origin, dest, bytes(key_share), bytes(seed_share)


class SecAggClient:
    """One client's state for a single round.

    Feed server messages to :meth:`handle`; it returns the reply to send, if
    any. The per-stage methods can also be called directly.
    """

    def __init__(
        self,
        client_id: int,
        vector: Sequence[float] | np.ndarray,
        weight: int = 1,
        rng: crypto.Randomness | None = None,
    ) -> None:
        if int(weight) < 1:
            raise ValueError(f"client {client_id}: weight must be >= 1, got {weight}")
        self.id = client_id
        self.vector = np.asarray(vector, dtype=np.float64)
        self.weight = int(weight)
        self.rng = rng or crypto.SystemRandomness()
        self.stage = ClientStage.NEW
        self.ops = OpCounter()
        self.config: SecAggConfig | None = None
        self.graph: NeighborGraph | None = None
        self.mask_keypair: crypto.KeyPair | None = None
        self.enc_keypair: crypto.KeyPair | None = None
        self.self_seed: bytes | None = None
        self.neighbor_keys: dict[int, tuple[bytes, bytes]] = {}
        # origin id -> (mask-key share, seed share), serialized SecretShare bytes
        self.held_shares: dict[int, tuple[bytes, bytes]] = {}
        self.abort_reason: AbortPayload | None = None

    def _expect(self, stage: ClientStage, action: str) -> None:
        if self.stage != stage:
            raise StateError(f"client {self.id}: cannot {action} in stage {self.stage.name}")

    def _message(self, stage: Stage, payload) -> SecAggMessage:
        return SecAggMessage(stage, self.id, payload)

    # -- dispatch ----------------------------------------------------------

    def handle(self, msg: SecAggMessage) -> SecAggMessage | None:
        if not msg.from_server:
            raise ProtocolError(f"client {self.id}: message not from the server")
        p = msg.payload
        if msg.stage == Stage.ABORT and isinstance(p, AbortPayload):
            self.abort(p)
            return None
        if self.stage == ClientStage.ABORTED:
            raise StateError(f"client {self.id}: round already aborted")
        if msg.stage == Stage.SETUP and isinstance(p, SetupPayload):
            self.setup(p.config)
            return self.ask_keys()
        if msg.stage == Stage.SHARE_KEYS and isinstance(p, NeighborKeysPayload):
            return self.share_keys(p.keys)
        if msg.stage == Stage.ASK_VECTORS and isinstance(p, RoutedSharesPayload):
            return self.ask_vectors(p.ciphertexts)
        if msg.stage == Stage.UNMASK and isinstance(p, UnmaskRequestPayload):
            return self.unmask_respond(p)
        raise ProtocolError(f"client {self.id}: unexpected {msg.stage.name} payload {type(p).__name__}")

    # -- stage 0 / 1 -------------------------------------------------------

    def setup(self, config: SecAggConfig) -> None:
        self._expect(ClientStage.NEW, "set up")
        if not 0 <= self.id < config.n:
            raise ProtocolError(f"client id {self.id} outside [0, {config.n})")
        if self.vector.shape != (config.l,):
            raise ProtocolError(f"client {self.id}: vector length {self.vector.shape} != l={config.l}")
        self.config = config
        self.graph = masking.build_neighbor_graph(config.n, config.share_num)
        self.stage = ClientStage.CONFIGURED

    def ask_keys(self) -> SecAggMessage:
        self._expect(ClientStage.CONFIGURED, "advertise keys")
        self.mask_keypair = crypto.generate_keypair(crypto.secure_random_seed(self.rng))
        self.enc_keypair = crypto.generate_keypair(crypto.secure_random_seed(self.rng))
        self.stage = ClientStage.KEYS_SENT
        return self._message(
            Stage.ASK_KEYS,
            PublicKeysPayload(self.mask_keypair.public_point, self.enc_keypair.public_point),
        )

    # -- stage 2 -----------------------------------------------------------

    def share_keys(self, neighbor_keys: dict[int, tuple[bytes, bytes]]) -> SecAggMessage:
        self._expect(ClientStage.KEYS_SENT, "share keys")
        cfg, graph = self.config, self.graph
        assert cfg is not None and graph is not None and self.mask_keypair and self.enc_keypair
        peers = set(graph.peers(self.id))
        unknown = set(neighbor_keys) - peers
        if unknown:
            raise ProtocolError(f"client {self.id}: keys for non-neighbors {sorted(unknown)}")
        if len(neighbor_keys) + 1 < cfg.threshold:
            raise ProtocolError(
                f"client {self.id}: only {len(neighbor_keys)} neighbor keys, threshold {cfg.threshold} unreachable"
            )
        self.neighbor_keys = dict(neighbor_keys)
        self.self_seed = crypto.secure_random_seed(self.rng)
        key_shares = crypto.shamir_split(self.mask_keypair.secret_scalar, cfg.share_num, cfg.threshold, self.rng)
        seed_shares = crypto.shamir_split(self.self_seed, cfg.share_num, cfg.threshold, self.rng)

        own = graph.share_index(self.id, self.id) - 1
        self.held_shares = {self.id: (key_shares[own].to_bytes(), seed_shares[own].to_bytes())}
        ciphertexts = {}
        for j in sorted(neighbor_keys):
            idx = graph.share_index(self.id, j) - 1
            plaintext = pack_share_pair(self.id, j, key_shares[idx].to_bytes(), seed_shares[idx].to_bytes())
            key = crypto.key_agree(self.enc_keypair, neighbor_keys[j][1], crypto.ENCRYPTION_CONTEXT)
            ciphertexts[j] = crypto.aead_encrypt(key, plaintext, self.rng)
        self.ops.key_agreements += len(neighbor_keys)
        self.stage = ClientStage.SHARES_SENT
        return self._message(Stage.SHARE_KEYS, ShareKeysPayload(ciphertexts))

    # -- stage 3 -----------------------------------------------------------

    def ask_vectors(self, routed: dict[int, bytes]) -> SecAggMessage:
        self._expect(ClientStage.SHARES_SENT, "send a masked vector")
        cfg, graph = self.config, self.graph
        assert cfg is not None and graph is not None and self.mask_keypair and self.enc_keypair
        for origin, ct in sorted(routed.items()):
            if origin not in self.neighbor_keys:
                raise ProtocolError(f"client {self.id}: shares from {origin}, which is not in the key list")
            key = crypto.key_agree(self.enc_keypair, self.neighbor_keys[origin][1], crypto.ENCRYPTION_CONTEXT)
            plaintext = crypto.aead_decrypt(key, ct)
            src, dest, key_share, seed_share = unpack_share_pair(plaintext)
            if (src, dest) != (origin, self.id):
                raise AuthenticationError(f"client {self.id}: share pair addressed {src}->{dest}, routed {origin}")
            self.held_shares[origin] = (key_share, seed_share)
        self.ops.key_agreements += len(routed)

        seeds = {j: masking.pairwise_seed(self.mask_keypair, self.neighbor_keys[j][0]) for j in routed}
        self.ops.key_agreements += len(seeds)
        q = modfield.quantize(self.vector, cfg.clipping_range, cfg.target_range)
        extended = modfield.extend_with_weight(q, self.weight, cfg.max_weights_factor, cfg.mod_range)
        assert self.self_seed is not None
        masked = masking.compute_masked_vector(
            extended, self.self_seed, seeds, self.id, graph, active=routed.keys(), counter=self.ops
        )
        self.stage = ClientStage.VECTOR_SENT
        return self._message(Stage.ASK_VECTORS, MaskedVectorPayload(masked.values))

    # -- stage 4 -----------------------------------------------------------

    def unmask_respond(self, request: UnmaskRequestPayload) -> SecAggMessage:
        self._expect(ClientStage.VECTOR_SENT, "reveal shares")
        both = set(request.seed_ids) & set(request.key_ids)
        if both:
            raise SecurityRefusal(f"client {self.id}: asked for both secrets of {sorted(both)}")
        if self.id in request.key_ids:
            raise SecurityRefusal(f"client {self.id}: asked for its own mask key while alive")
        shares: list[tuple[int, ShareKind, bytes]] = []
        for j in request.seed_ids:
            if j in self.held_shares:
                shares.append((j, ShareKind.SEED, self.held_shares[j][1]))
        for j in request.key_ids:
            if j in self.held_shares:
                shares.append((j, ShareKind.MASK_KEY, self.held_shares[j][0]))
        self.stage = ClientStage.DONE
        return self._message(Stage.UNMASK, UnmaskReplyPayload(shares))

    def abort(self, payload: AbortPayload | None = None) -> None:
        self.abort_reason = payload
        # drop references to secrets; Python offers no reliable in-place wipe
        self.mask_keypair = None
        self.enc_keypair = None
        self.self_seed = None
        self.held_shares = {}
        self.stage = ClientStage.ABORTED
