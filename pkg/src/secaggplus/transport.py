"""In-process round simulator: routes framed messages, injects dropouts, meters traffic.

Every message is encoded to its wire frame, metered, recorded in the
transcript and decoded again before delivery, so the byte counts are those of
the real wire format.
"""

from __future__ import annotations

import hashlib
import math
import random
import time
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import crypto
from .config import SecAggConfig
from .errors import ProtocolError, RoundAborted
from .masking import OpCounter
from .protocol import (
    SERVER_ID,
    ClientStage,
    RoundResult,
    SecAggClient,
    SecAggMessage,
    SecAggServer,
    decode_message,
    encode_message,
)


@dataclass(frozen=True)
class DropoutSchedule:
    """Clients that vanish after completing a stage (0-3)."""

    entries: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        ids = [cid for cid, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise ValueError("dropout schedule lists a client twice")
        for cid, stage in self.entries:
            if cid < 0:
                raise ValueError(f"bad client id {cid}")
            if stage not in (0, 1, 2, 3):
                raise ValueError(f"drop_after_stage must be in 0..3, got {stage}")

    @classmethod
    def after_stage(cls, ids: Iterable[int], stage: int) -> DropoutSchedule:
        return cls(tuple((int(i), stage) for i in sorted(ids)))

    @classmethod
    def random(cls, n: int, frac: float, stage: int, seed: int) -> DropoutSchedule:
        count = int(round(frac * n))
        ids = random.Random(f"dropouts/{seed}/{n}").sample(range(n), count)
        return cls.after_stage(ids, stage)

    def as_dict(self) -> dict[int, int]:
        return dict(self.entries)

    @property
    def dropped_ids(self) -> tuple[int, ...]:
        return tuple(sorted(cid for cid, _ in self.entries))


@dataclass(frozen=True)
class TranscriptEntry:
    stage: int
    sender: int
    recipient: int
    frame: bytes


@dataclass
class Transcript:
    entries: list[TranscriptEntry] = field(default_factory=list)

    def append(self, entry: TranscriptEntry) -> None:
        self.entries.append(entry)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def digest(self) -> str:
        h = hashlib.sha256()
        for e in self.entries:
            h.update(e.sender.to_bytes(4, "big") + e.recipient.to_bytes(4, "big"))
            h.update(len(e.frame).to_bytes(8, "big") + e.frame)
        return h.hexdigest()

    def messages(self) -> Iterable[tuple[TranscriptEntry, SecAggMessage]]:
        for e in self.entries:
            yield e, decode_message(e.frame)


@dataclass
class TrafficMeter:
    """Byte, work and time counters for one round."""

    client_sent: dict[int, dict[int, int]] = field(default_factory=lambda: defaultdict(lambda: defaultdict(int)))
    client_received: dict[int, dict[int, int]] = field(default_factory=lambda: defaultdict(lambda: defaultdict(int)))
    server_sent: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    server_received: dict[int, int] = field(default_factory=lambda: defaultdict(int))
    client_ops: dict[int, OpCounter] = field(default_factory=dict)
    server_ops: OpCounter = field(default_factory=OpCounter)
    client_time: dict[int, float] = field(default_factory=lambda: defaultdict(float))
    server_time: float = 0.0

    def record(self, stage: int, sender: int, recipient: int | None, nbytes: int) -> None:
        if sender == SERVER_ID:
            self.server_sent[stage] += nbytes
            if recipient is not None:
                self.client_received[recipient][stage] += nbytes
        else:
            self.client_sent[sender][stage] += nbytes
            self.server_received[stage] += nbytes

    def client_bytes(self, cid: int) -> int:
        return sum(self.client_sent[cid].values()) + sum(self.client_received[cid].values())

    @property
    def server_bytes(self) -> int:
        return sum(self.server_sent.values()) + sum(self.server_received.values())


def byte_counts(meter: TrafficMeter) -> dict:
    clients = sorted(set(meter.client_sent) | set(meter.client_received))
    return {
        "per_client": {cid: meter.client_bytes(cid) for cid in clients},
        "per_client_sent": {cid: sum(meter.client_sent[cid].values()) for cid in clients},
        "per_client_received": {cid: sum(meter.client_received[cid].values()) for cid in clients},
        "server": {
            "sent": sum(meter.server_sent.values()),
            "received": sum(meter.server_received.values()),
            "total": meter.server_bytes,
        },
    }


def op_counts(meter: TrafficMeter) -> dict:
    s = meter.server_ops
    return {
        "prg_elements_client": {cid: ops.prg_elements for cid, ops in sorted(meter.client_ops.items())},
        "prg_elements_server": s.prg_elements,
        "seed_reconstructions": s.seed_reconstructions,
        "key_reconstructions": s.key_reconstructions,
        "reconstructions": s.reconstructions,
        "field_ops_server": s.field_ops,
        "field_ops_client": {cid: ops.field_ops for cid, ops in sorted(meter.client_ops.items())},
        "key_agreements_server": s.key_agreements,
    }


@dataclass
class RoundReport:
    """What the simulator knows about a round, successful or not."""

    meter: TrafficMeter
    transcript: Transcript
    survivor_sets: tuple[frozenset[int], ...]
    client_stages: dict[int, ClientStage]
    dropped: tuple[int, ...]
    refusals: dict[int, str] = field(default_factory=dict)


class _Router:
    def __init__(
        self,
        server: SecAggServer,
        clients: dict[int, SecAggClient],
        schedule: DropoutSchedule,
        order_rng: random.Random | None,
        keep_transcript: bool,
    ) -> None:
        self.server = server
        self.clients = clients
        self.drop_after = schedule.as_dict()
        self.order_rng = order_rng
        self.keep_transcript = keep_transcript
        self.meter = TrafficMeter()
        self.transcript = Transcript()
        self.refusals: dict[int, str] = {}

    def _alive_for(self, cid: int, stage: int) -> bool:
        return self.drop_after.get(cid, math.inf) >= stage

    def _ship(self, msg: SecAggMessage, recipient: int, deliver: bool) -> SecAggMessage:
        frame = encode_message(msg)
        self.meter.record(int(msg.stage), msg.sender_id, recipient if deliver else None, len(frame))
        if self.keep_transcript:
            self.transcript.append(TranscriptEntry(int(msg.stage), msg.sender_id, recipient, frame))
        return decode_message(frame)

    def exchange(self, outbound: dict[int, SecAggMessage], reply_stage: int) -> None:
        """Deliver one stage's requests and feed the replies back to the server.

        A client dropping after stage ``s`` still receives the request that
        opens stage ``s + 1`` but never answers it.
        """
        order = sorted(outbound)
        if self.order_rng is not None:
            self.order_rng.shuffle(order)
        for cid in order:
            reachable = self._alive_for(cid, reply_stage - 1)
            msg = self._ship(outbound[cid], cid, reachable)
            if not reachable:
                continue
            client = self.clients[cid]
            start = time.perf_counter()
            try:
                reply = client.handle(msg)
            except ProtocolError as exc:
                # a refusing client leaves the round; the server sees a dropout
                client.abort()
                self.refusals[cid] = str(exc)
                self.drop_after[cid] = reply_stage - 1
                reply = None
            self.meter.client_time[cid] += time.perf_counter() - start
            if reply is None or not self._alive_for(cid, reply_stage):
                continue
            delivered = self._ship(reply, SERVER_ID, True)
            start = time.perf_counter()
            self.server.receive(delivered)
            self.meter.server_time += time.perf_counter() - start

    def server_step(self, fn):
        start = time.perf_counter()
        try:
            return fn()
        finally:
            self.meter.server_time += time.perf_counter() - start

    def broadcast_abort(self, exc: RoundAborted) -> None:
        for cid, msg in self.server.abort_messages().items():
            reachable = self._alive_for(cid, exc.stage)
            msg = self._ship(msg, cid, reachable)
            if reachable:
                self.clients[cid].handle(msg)

    def report(self) -> RoundReport:
        self.meter.client_ops = {cid: c.ops for cid, c in sorted(self.clients.items())}
        self.meter.server_ops = self.server.ops
        return RoundReport(
            meter=self.meter,
            transcript=self.transcript,
            survivor_sets=tuple(self.server.survivor_sets),
            client_stages={cid: c.stage for cid, c in sorted(self.clients.items())},
            dropped=tuple(sorted(self.drop_after)),
            refusals=dict(self.refusals),
        )


def make_clients(
    inputs: Sequence[tuple[Sequence[float] | np.ndarray, int]], master_seed: int
) -> dict[int, SecAggClient]:
    master = crypto.SeededRandomness(master_seed)
    return {
        cid: SecAggClient(cid, vector, weight, rng=master.child(f"client/{cid}"))
        for cid, (vector, weight) in enumerate(inputs)
    }


def run_round(
    config: SecAggConfig,
    inputs: Sequence[tuple[Sequence[float] | np.ndarray, int]],
    schedule: DropoutSchedule | None = None,
    master_seed: int = 0,
    *,
    shuffle_arrivals: bool = False,
    keep_transcript: bool = True,
) -> RoundResult:
    """Run stages 0-4 for ``config.n`` simulated clients.

    ``inputs`` holds one ``(vector, weight)`` per client. Deterministic for a
    given ``master_seed``; with ``shuffle_arrivals`` the per-stage delivery
    order is permuted (seeded as well). Raises :class:`RoundAborted` with a
    :class:`RoundReport` attached as ``.report``.
    """
    if len(inputs) != config.n:
        raise ValueError(f"expected {config.n} client inputs, got {len(inputs)}")
    schedule = schedule or DropoutSchedule()
    if any(cid >= config.n for cid in schedule.dropped_ids):
        raise ValueError("dropout schedule names a client outside [0, n)")

    clients = make_clients(inputs, master_seed)
    server = SecAggServer(config)
    order_rng = random.Random(f"arrivals/{master_seed}") if shuffle_arrivals else None
    router = _Router(server, clients, schedule, order_rng, keep_transcript)

    try:
        router.exchange(router.server_step(server.setup), 1)
        router.exchange(router.server_step(server.broadcast_keys), 2)
        router.exchange(router.server_step(server.route_shares), 3)
        router.exchange(router.server_step(server.unmask_request), 4)
        result = router.server_step(server.finalize)
    except RoundAborted as exc:
        router.broadcast_abort(exc)
        exc.report = router.report()
        raise
    report = router.report()
    result.metrics = report.meter
    result.transcript = report.transcript
    result.extra["report"] = report
    return result


def plaintext_weighted_average(
    config: SecAggConfig,
    inputs: Sequence[tuple[Sequence[float] | np.ndarray, int]],
    survivors: Iterable[int],
) -> np.ndarray:
    """Reference result: weighted mean of the clipped survivor vectors."""
    total = np.zeros(config.l)
    weight_sum = 0
    for cid in sorted(survivors):
        vector, weight = inputs[cid]
        w = min(int(weight), config.max_weights_factor)
        total += w * np.clip(np.asarray(vector, dtype=np.float64), -config.clipping_range, config.clipping_range)
        weight_sum += w
    return total / weight_sum
