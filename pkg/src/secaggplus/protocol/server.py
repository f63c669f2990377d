"""Server side of the five-stage round, including unmasking."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .. import crypto, kernels, masking, modfield
from ..config import SecAggConfig, min_clients_limit
from ..errors import AbortReason, ProtocolError, RoundAborted
from ..masking import OpCounter
from ..modfield import FieldVector
from .messages import (
    SERVER_ID,
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


class ServerStage(enum.IntEnum):
    NEW = 0
    SETUP_SENT = 1
    KEYS_BROADCAST = 2
    SHARES_ROUTED = 3
    UNMASK_REQUESTED = 4
    FINISHED = 5
    ABORTED = 6


# reply stage accepted while the server sits in a given ServerStage
_EXPECTED_REPLY = {
    ServerStage.SETUP_SENT: Stage.ASK_KEYS,
    ServerStage.KEYS_BROADCAST: Stage.SHARE_KEYS,
    ServerStage.SHARES_ROUTED: Stage.ASK_VECTORS,
    ServerStage.UNMASK_REQUESTED: Stage.UNMASK,
}
_PAYLOAD_TYPE = {
    Stage.ASK_KEYS: PublicKeysPayload,
    Stage.SHARE_KEYS: ShareKeysPayload,
    Stage.ASK_VECTORS: MaskedVectorPayload,
    Stage.UNMASK: UnmaskReplyPayload,
}


@dataclass
class RoundResult:
    aggregate: np.ndarray
    survivors: tuple[int, ...]
    survivor_sets: tuple[frozenset[int], ...]
    server_ops: OpCounter
    metrics: Any = None
    transcript: Any = None
    extra: dict[str, Any] = field(default_factory=dict)

    @property
    def survivor_count(self) -> int:
        return len(self.survivors)


class SecAggServer:
    """Round orchestrator state.

    Call order: :meth:`setup`, then for each stage feed replies to
    :meth:`receive` and close the stage with :meth:`broadcast_keys`,
    :meth:`route_shares`, :meth:`unmask_request` and :meth:`finalize`.
    Any closing method may raise :class:`RoundAborted`.
    """

    def __init__(self, config: SecAggConfig) -> None:
        self.config = config
        self.graph = masking.build_neighbor_graph(config.n, config.share_num)
        self.limit = min_clients_limit(config)
        self.stage = ServerStage.NEW
        self.ops = OpCounter()
        self.survivor_sets: list[frozenset[int]] = []
        self.public_keys: dict[int, tuple[bytes, bytes]] = {}
        self.share_ciphertexts: dict[int, dict[int, bytes]] = {}
        self.masked: dict[int, np.ndarray] = {}
        self.requests: dict[int, UnmaskRequestPayload] = {}
        self.unmask_replies: dict[int, UnmaskReplyPayload] = {}
        self.abort_info: RoundAborted | None = None

    # -- helpers -----------------------------------------------------------

    def _message(self, stage: Stage, payload) -> SecAggMessage:
        return SecAggMessage(stage, SERVER_ID, payload)

    def _expect(self, stage: ServerStage) -> None:
        if self.stage != stage:
            raise ProtocolError(f"server in stage {self.stage.name}, expected {stage.name}")

    def _abort(self, reason: AbortReason, stage: int, detail: str) -> RoundAborted:
        self.stage = ServerStage.ABORTED
        self.abort_info = RoundAborted(reason, stage, detail)
        return self.abort_info

    def _close(self, stage: int, ids: set[int]) -> frozenset[int]:
        survivors = frozenset(ids)
        self.survivor_sets.append(survivors)
        if len(survivors) < self.limit:
            raise self._abort(
                AbortReason.INSUFFICIENT_SURVIVORS,
                stage,
                f"{len(survivors)} clients left, need {self.limit}",
            )
        return survivors

    @property
    def live(self) -> frozenset[int]:
        return self.survivor_sets[-1] if self.survivor_sets else frozenset()

    def abort_messages(self) -> dict[int, SecAggMessage]:
        info = self.abort_info
        if info is None:
            return {}
        payload = AbortPayload(info.reason, info.stage)
        return {i: self._message(Stage.ABORT, payload) for i in sorted(self.live)}

    # -- stage 0 -----------------------------------------------------------

    def setup(self, client_ids: list[int] | None = None) -> dict[int, SecAggMessage]:
        self._expect(ServerStage.NEW)
        ids = set(range(self.config.n) if client_ids is None else client_ids)
        if not ids <= set(range(self.config.n)):
            raise ProtocolError("client ids must lie in [0, n)")
        self.stage = ServerStage.SETUP_SENT
        self._close(0, ids)
        payload = SetupPayload(self.config)
        return {i: self._message(Stage.SETUP, payload) for i in sorted(ids)}

    def receive(self, msg: SecAggMessage) -> None:
        expected = _EXPECTED_REPLY.get(self.stage)
        if expected is None or msg.stage != expected:
            raise ProtocolError(f"server in {self.stage.name} cannot accept {msg.stage.name}")
        if not isinstance(msg.payload, _PAYLOAD_TYPE[expected]):
            raise ProtocolError(f"bad payload type {type(msg.payload).__name__} for {expected.name}")
        sender = msg.sender_id
        if sender not in self.live:
            raise ProtocolError(f"client {sender} is not part of stage {expected.name}")
        p = msg.payload
        if expected == Stage.ASK_KEYS:
            store: dict = self.public_keys
            for key in (p.mask_key, p.enc_key):
                try:
                    crypto.load_public_key(key)
                except crypto.CryptoError as exc:
                    raise ProtocolError(f"client {sender}: {exc}") from None
            value: Any = (p.mask_key, p.enc_key)
        elif expected == Stage.SHARE_KEYS:
            store = self.share_ciphertexts
            allowed = set(self.graph.peers(sender)) & self.live
            if not set(p.ciphertexts) <= allowed:
                raise ProtocolError(f"client {sender} addressed shares to non-neighbors")
            value = dict(p.ciphertexts)
        elif expected == Stage.ASK_VECTORS:
            store = self.masked
            values = np.asarray(p.values, dtype=np.uint64)
            if values.shape != (self.config.l + 1,):
                raise ProtocolError(f"client {sender} sent {values.shape[0]} elements, expected l+1")
            if values.size and int(values.max()) >= self.config.mod_range:
                raise ProtocolError(f"client {sender} sent unreduced field elements")
            value = values
        else:
            store = self.unmask_replies
            value = p
        if sender in store:
            raise ProtocolError(f"duplicate {expected.name} reply from client {sender}")
        store[sender] = value

    # -- stage 1 -> 2 ------------------------------------------------------

    def broadcast_keys(self) -> dict[int, SecAggMessage]:
        self._expect(ServerStage.SETUP_SENT)
        u1 = self._close(1, set(self.public_keys))
        out = {}
        for i in sorted(u1):
            keys = {j: self.public_keys[j] for j in self.graph.peers(i) if j in u1}
            out[i] = self._message(Stage.SHARE_KEYS, NeighborKeysPayload(keys))
        self.stage = ServerStage.KEYS_BROADCAST
        return out

    # -- stage 2 -> 3 ------------------------------------------------------

    def route_shares(self) -> dict[int, SecAggMessage]:
        self._expect(ServerStage.KEYS_BROADCAST)
        u2 = self._close(2, set(self.share_ciphertexts))
        out = {}
        for i in sorted(u2):
            bundle = {
                origin: cts[i]
                for origin, cts in sorted(self.share_ciphertexts.items())
                if origin in u2 and i in cts
            }
            out[i] = self._message(Stage.ASK_VECTORS, RoutedSharesPayload(bundle))
        self.stage = ServerStage.SHARES_ROUTED
        return out

    # -- stage 3 -> 4 ------------------------------------------------------

    def unmask_request(self) -> dict[int, SecAggMessage]:
        self._expect(ServerStage.SHARES_ROUTED)
        u2 = self.survivor_sets[2]
        u3 = self._close(3, set(self.masked))
        dropped = u2 - u3
        out = {}
        for i in sorted(u3):
            hood = self.graph.neighbors(i)
            seed_ids = tuple(j for j in hood if j in u3)
            key_ids = tuple(j for j in hood if j in dropped)
            # never ask for both secrets of one client
            assert not set(seed_ids) & set(key_ids)
            request = UnmaskRequestPayload(seed_ids, key_ids)
            self.requests[i] = request
            out[i] = self._message(Stage.UNMASK, request)
        self.stage = ServerStage.UNMASK_REQUESTED
        return out

    # -- stage 4 -----------------------------------------------------------

    def _collect_shares(self) -> tuple[dict[int, list[crypto.SecretShare]], dict[int, list[crypto.SecretShare]]]:
        seed_shares: dict[int, list[crypto.SecretShare]] = {}
        key_shares: dict[int, list[crypto.SecretShare]] = {}
        for holder in sorted(self.unmask_replies):
            request = self.requests[holder]
            for origin, kind, raw in self.unmask_replies[holder].shares:
                if kind == ShareKind.SEED and origin in request.seed_ids:
                    bucket = seed_shares
                elif kind == ShareKind.MASK_KEY and origin in request.key_ids:
                    bucket = key_shares
                else:
                    raise self._abort(
                        AbortReason.PROTOCOL_VIOLATION, 4, f"client {holder} sent an unrequested share of {origin}"
                    )
                try:
                    share = crypto.SecretShare.from_bytes(raw)
                except crypto.ShareError as exc:
                    raise self._abort(AbortReason.PROTOCOL_VIOLATION, 4, str(exc)) from None
                bucket.setdefault(origin, []).append(share)
        return seed_shares, key_shares

    def _reconstruct(self, shares: list[crypto.SecretShare], owner: int, what: str) -> bytes:
        t = self.config.threshold
        if len(shares) < t:
            raise self._abort(
                AbortReason.INSUFFICIENT_SHARES, 4, f"{len(shares)} {what} shares of client {owner}, need {t}"
            )
        try:
            return crypto.shamir_reconstruct(sorted(shares, key=lambda s: s.index), t)
        except crypto.ShareError as exc:
            raise self._abort(AbortReason.PROTOCOL_VIOLATION, 4, f"client {owner}: {exc}") from None

    def finalize(self) -> RoundResult:
        self._expect(ServerStage.UNMASK_REQUESTED)
        cfg = self.config
        u2, u3 = self.survivor_sets[2], self.survivor_sets[3]
        self._close(4, set(self.unmask_replies))
        seed_shares, key_shares = self._collect_shares()
        length, m = cfg.l + 1, cfg.mod_range

        acc = FieldVector.zeros(length, m)
        for j in sorted(u3):
            kernels.add_mod_inplace(acc.values, self.masked[j], m)
        self.ops.field_ops += len(u3) * length

        for j in sorted(u3):
            seed = self._reconstruct(seed_shares.get(j, []), j, "seed")
            self.ops.seed_reconstructions += 1
            crypto.prg_accumulate(acc, seed, -1)
            self.ops.prg_elements += length
            self.ops.field_ops += length

        for d in sorted(u2 - u3):
            partners = set(self.graph.peers(d)) & u3
            if not partners:
                continue
            scalar = self._reconstruct(key_shares.get(d, []), d, "mask-key")
            self.ops.key_reconstructions += 1
            try:
                recovered = crypto.keypair_from_scalar(scalar)
            except crypto.CryptoError:
                recovered = None
            if recovered is None or recovered.public_point != self.public_keys[d][0]:
                raise self._abort(
                    AbortReason.PROTOCOL_VIOLATION, 4, f"reconstructed mask key of client {d} does not match"
                )
            residue = masking.dropout_pairwise_mask_total(
                d,
                scalar,
                {j: self.public_keys[j][0] for j in partners},
                length,
                m,
                self.graph,
                u3,
                counter=self.ops,
            )
            acc = modfield.vec_sub_mod(acc, residue)

        try:
            averaged = modfield.pop_weight_and_divide(acc)
        except modfield.FieldError as exc:
            raise self._abort(AbortReason.ZERO_WEIGHT, 4, str(exc)) from None
        aggregate = modfield.dequantize(averaged, cfg.clipping_range, cfg.target_range)
        self.stage = ServerStage.FINISHED
        return RoundResult(
            aggregate=aggregate,
            survivors=tuple(sorted(u3)),
            survivor_sets=tuple(self.survivor_sets),
            server_ops=self.ops,
            extra={"weight_sum": int(acc.values[0])},
        )
