import numpy as np
import pytest

from secaggplus import crypto, masking, modfield
from secaggplus.config import validate
from secaggplus.errors import AuthenticationError, AbortReason, ProtocolError, RoundAborted, SecurityRefusal, StateError
from secaggplus.protocol import SERVER_ID, ClientStage, SecAggClient, SecAggMessage, SecAggServer, ServerStage, Stage
from secaggplus.protocol.client import pack_share_pair, unpack_share_pair
from secaggplus.protocol.messages import (
    MaskedVectorPayload,
    PublicKeysPayload,
    UnmaskRequestPayload,
    decode_message,
    encode_message,
)
from secaggplus.transport import DropoutSchedule, plaintext_weighted_average, run_round
from secaggplus.verify import tolerance

from conftest import make_inputs


class Harness:
    """Drives one round by hand so tests can intervene between stages."""

    def __init__(self, config, inputs, seed=0):
        master = crypto.SeededRandomness(seed)
        self.config = config
        self.server = SecAggServer(config)
        self.clients = {
            i: SecAggClient(i, v, w, rng=master.child(i)) for i, (v, w) in enumerate(inputs)
        }

    def deliver(self, outbound, skip=()):
        replies = {}
        for cid, msg in outbound.items():
            if cid in skip:
                continue
            reply = self.clients[cid].handle(decode_message(encode_message(msg)))
            if reply is not None:
                replies[cid] = reply
        return replies

    def feed(self, replies):
        for reply in replies.values():
            self.server.receive(decode_message(encode_message(reply)))


def two_client_config(**extra):
    return validate({"share_num": 2, "threshold": 2, "clipping_range": 8.0, "max_weights_factor": 3, **extra}, 2, 1)


def test_two_clients_weighted_average():
    cfg = two_client_config()
    result = run_round(cfg, [([2.0], 1), ([6.0], 3)])
    assert abs(result.aggregate[0] - 5.0) <= tolerance(cfg)
    assert result.extra["weight_sum"] == 4


def test_identical_vectors_average_to_themselves():
    cfg = validate({"share_num": 5, "threshold": 3, "min_num": 1}, 8, 6)
    v = np.linspace(-2, 2, 6)
    result = run_round(cfg, [(v, 1)] * 8, master_seed=4)
    assert np.max(np.abs(result.aggregate - v)) <= tolerance(cfg)


def test_one_dropout_after_share_keys():
    cfg = validate({"share_num": 20, "threshold": 11}, 20, 50)
    inputs = make_inputs(cfg, seed=2)
    result = run_round(cfg, inputs, DropoutSchedule.after_stage([13], 2), master_seed=2)
    assert result.survivors == tuple(i for i in range(20) if i != 13)
    expected = plaintext_weighted_average(cfg, inputs, result.survivors)
    assert np.max(np.abs(result.aggregate - expected)) <= tolerance(cfg)


def test_survivor_sets_nested_and_dropout_excluded():
    cfg = validate({"share_num": 5, "threshold": 2, "min_num": 1}, 5, 3)
    schedule = DropoutSchedule(((0, 0), (1, 1), (2, 2)))
    result = run_round(cfg, make_inputs(cfg), schedule)
    u = result.survivor_sets
    assert len(u) == 5
    assert all(u[i] >= u[i + 1] for i in range(4))
    assert 0 not in u[1] and 1 in u[1] and 1 not in u[2] and 2 in u[2] and 2 not in u[3]


def test_stage_flow_and_counts():
    cfg = validate({"share_num": 3, "threshold": 2, "min_num": 1}, 6, 4)
    h = Harness(cfg, make_inputs(cfg))
    keys = h.deliver(h.server.setup())
    assert all(isinstance(r.payload, PublicKeysPayload) for r in keys.values())
    assert all(len(r.payload.mask_key) == len(r.payload.enc_key) == 65 for r in keys.values())
    h.feed(keys)
    broadcast = h.server.broadcast_keys()
    assert all(len(m.payload.keys) == 2 and cid not in m.payload.keys for cid, m in broadcast.items())
    shares = h.deliver(broadcast)
    assert all(len(r.payload.ciphertexts) == 2 for r in shares.values())
    h.feed(shares)
    routed = h.server.route_shares()
    # the relay must not alter ciphertexts
    for dest, msg in routed.items():
        for origin, ct in msg.payload.ciphertexts.items():
            assert ct == shares[origin].payload.ciphertexts[dest]
    vectors = h.deliver(routed)
    assert all(len(r.payload.values) == cfg.l + 1 for r in vectors.values())
    h.feed(vectors)
    requests = h.server.unmask_request()
    assert all(m.payload.key_ids == () for m in requests.values())
    h.feed(h.deliver(requests))
    result = h.server.finalize()
    assert h.server.stage == ServerStage.FINISHED
    assert all(c.stage == ClientStage.DONE for c in h.clients.values())
    assert result.survivor_count == 6


def test_complete_graph_broadcast_sizes():
    cfg = validate({"share_num": 5, "threshold": 3}, 5, 2)
    h = Harness(cfg, make_inputs(cfg))
    h.feed(h.deliver(h.server.setup()))
    assert all(len(m.payload.keys) == 4 for m in h.server.broadcast_keys().values())


def test_dropped_neighbor_shrinks_bundle():
    cfg = validate({"share_num": 5, "threshold": 2, "min_num": 1}, 7, 2)
    h = Harness(cfg, make_inputs(cfg))
    h.feed(h.deliver(h.server.setup()))
    h.feed(h.deliver(h.server.broadcast_keys(), skip={1}))
    routed = h.server.route_shares()
    assert len(routed[0].payload.ciphertexts) == 3
    assert len(routed[4].payload.ciphertexts) == 4


def test_key_requests_for_dropped_ids():
    cfg = validate({"share_num": 5, "threshold": 3, "min_num": 1}, 5, 2)
    h = Harness(cfg, make_inputs(cfg))
    h.feed(h.deliver(h.server.setup()))
    h.feed(h.deliver(h.server.broadcast_keys()))
    h.feed(h.deliver(h.server.route_shares(), skip={3}))
    for req in h.server.unmask_request().values():
        assert req.payload.key_ids == (3,)
        assert 3 not in req.payload.seed_ids


def test_client_state_errors():
    cfg = two_client_config()
    c = SecAggClient(0, [1.0])
    with pytest.raises(StateError):
        c.ask_keys()
    c.setup(cfg)
    c.ask_keys()
    with pytest.raises(StateError):
        c.ask_keys()
    with pytest.raises(StateError):
        c.setup(cfg)
    with pytest.raises(ProtocolError):
        SecAggClient(5, [1.0]).setup(cfg)
    with pytest.raises(ProtocolError):
        SecAggClient(0, [1.0, 2.0]).setup(cfg)


def test_client_rejects_non_server_and_non_neighbor():
    cfg = validate({"share_num": 3, "threshold": 2, "min_num": 1}, 6, 1)
    c = SecAggClient(0, [0.0])
    with pytest.raises(ProtocolError):
        c.handle(SecAggMessage(Stage.ASK_KEYS, 3, PublicKeysPayload(b"", b"")))
    c.setup(cfg)
    c.ask_keys()
    kp = crypto.generate_keypair()
    with pytest.raises(ProtocolError):
        c.share_keys({3: (kp.public_point, kp.public_point)})


def test_ask_keys_deterministic_under_seed():
    cfg = two_client_config()
    replies = []
    for _ in range(2):
        c = SecAggClient(0, [1.0], rng=crypto.SeededRandomness("replay"))
        c.setup(cfg)
        replies.append(encode_message(c.ask_keys()))
    assert replies[0] == replies[1]


def test_different_seeds_give_different_masked_vectors():
    cfg = two_client_config()
    runs = [run_round(cfg, [([1.0], 1), ([1.0], 1)], master_seed=s) for s in (1, 2)]
    vectors = [
        [m.payload.values.tolist() for e, m in r.transcript.messages() if m.stage == Stage.ASK_VECTORS and not m.from_server]
        for r in runs
    ]
    assert vectors[0][0] != vectors[0][1]
    assert vectors[0] != vectors[1]


def test_mask_ledger_recovers_extended_vector():
    cfg = validate({"share_num": 3, "threshold": 2, "min_num": 1}, 4, 5)
    inputs = make_inputs(cfg, seed=9)
    h = Harness(cfg, inputs, seed=9)
    h.feed(h.deliver(h.server.setup()))
    h.feed(h.deliver(h.server.broadcast_keys()))
    vectors = h.deliver(h.server.route_shares())
    for cid, reply in vectors.items():
        c = h.clients[cid]
        y = modfield.FieldVector(reply.payload.values.copy(), cfg.mod_range)
        crypto.prg_accumulate(y, c.self_seed, -1)
        for j in c.graph.peers(cid):
            crypto.prg_accumulate(y, masking.pairwise_seed(c.mask_keypair, c.neighbor_keys[j][0]), -masking.pairwise_sign(cid, j))
        q = modfield.quantize(inputs[cid][0], cfg.clipping_range, cfg.target_range)
        assert y == modfield.extend_with_weight(q, inputs[cid][1], cfg.max_weights_factor, cfg.mod_range)


def test_tampered_ciphertext_rejected():
    cfg = validate({"share_num": 3, "threshold": 3}, 3, 2)
    h = Harness(cfg, make_inputs(cfg))
    h.feed(h.deliver(h.server.setup()))
    h.feed(h.deliver(h.server.broadcast_keys()))
    routed = h.server.route_shares()
    ct = bytearray(routed[0].payload.ciphertexts[1])
    ct[20] ^= 0x80
    routed[0].payload.ciphertexts[1] = bytes(ct)
    with pytest.raises(AuthenticationError):
        h.clients[0].handle(routed[0])


def test_misaddressed_share_pair_rejected():
    # a ciphertext that decrypts fine but names another destination is refused
    cfg = validate({"share_num": 3, "threshold": 3}, 3, 2)
    h = Harness(cfg, make_inputs(cfg))
    h.feed(h.deliver(h.server.setup()))
    h.feed(h.deliver(h.server.broadcast_keys()))
    routed = h.server.route_shares()
    sender = h.clients[1]
    key = crypto.key_agree(sender.enc_keypair, sender.neighbor_keys[0][1], crypto.ENCRYPTION_CONTEXT)
    routed[0].payload.ciphertexts[1] = crypto.aead_encrypt(key, pack_share_pair(1, 2, b"\x01k", b"\x01s"))
    with pytest.raises(AuthenticationError):
        h.clients[0].handle(routed[0])


def test_share_pair_codec():
    blob = pack_share_pair(3, 9, b"\x01abc", b"\x01de")
    assert unpack_share_pair(blob) == (3, 9, b"\x01abc", b"\x01de")
    with pytest.raises(ProtocolError):
        unpack_share_pair(blob[:-1])
    with pytest.raises(ProtocolError):
        unpack_share_pair(blob + b"x")


def _client_at_unmask():
    cfg = validate({"share_num": 3, "threshold": 2}, 3, 1)
    h = Harness(cfg, make_inputs(cfg))
    h.feed(h.deliver(h.server.setup()))
    h.feed(h.deliver(h.server.broadcast_keys()))
    h.feed(h.deliver(h.server.route_shares()))
    return h


def test_client_refuses_conflicting_request():
    h = _client_at_unmask()
    with pytest.raises(SecurityRefusal):
        h.clients[0].unmask_respond(UnmaskRequestPayload(seed_ids=(1, 2), key_ids=(2,)))
    with pytest.raises(SecurityRefusal):
        h.clients[1].unmask_respond(UnmaskRequestPayload(seed_ids=(0,), key_ids=(1,)))


def test_client_honest_request_and_unknown_origin():
    h = _client_at_unmask()
    reply = h.clients[0].unmask_respond(UnmaskRequestPayload(seed_ids=(0, 1, 2, 7), key_ids=()))
    assert sorted(origin for origin, _, _ in reply.payload.shares) == [0, 1, 2]


def test_shares_pool_to_secrets():
    h = _client_at_unmask()
    replies = {cid: h.clients[cid].unmask_respond(UnmaskRequestPayload((0, 1, 2), ())) for cid in (0, 1)}
    for owner in range(3):
        pool = [
            crypto.SecretShare.from_bytes(raw)
            for reply in replies.values()
            for origin, _, raw in reply.payload.shares
            if origin == owner
        ]
        assert crypto.shamir_reconstruct(pool, 2) == h.clients[owner].self_seed


def test_server_rejects_bad_replies():
    cfg = validate({"share_num": 3, "threshold": 2}, 3, 2)
    h = Harness(cfg, make_inputs(cfg))
    keys = h.deliver(h.server.setup())
    with pytest.raises(ProtocolError):
        h.server.receive(SecAggMessage(Stage.ASK_VECTORS, 0, MaskedVectorPayload(np.zeros(3, dtype=np.uint64))))
    with pytest.raises(ProtocolError):
        h.server.receive(SecAggMessage(Stage.ASK_KEYS, 0, PublicKeysPayload(b"\x04" + bytes(64), keys[0].payload.enc_key)))
    h.server.receive(keys[0])
    with pytest.raises(ProtocolError):
        h.server.receive(keys[0])
    h.feed({1: keys[1], 2: keys[2]})
    h.feed(h.deliver(h.server.broadcast_keys()))
    h.feed(h.deliver(h.server.route_shares()))
    for bad in (np.zeros(2, dtype=np.uint64), np.full(3, cfg.mod_range, dtype=np.uint64)):
        with pytest.raises(ProtocolError):
            h.server.receive(SecAggMessage(Stage.ASK_VECTORS, 0, MaskedVectorPayload(bad)))


def test_server_out_of_order():
    cfg = two_client_config()
    s = SecAggServer(cfg)
    with pytest.raises(ProtocolError):
        s.broadcast_keys()
    s.setup()
    with pytest.raises(ProtocolError):
        s.setup()
    with pytest.raises(ProtocolError):
        s.finalize()


def test_abort_below_threshold_reaches_all_clients():
    cfg = validate({"share_num": 5, "threshold": 3, "min_num": 1}, 5, 2)
    with pytest.raises(RoundAborted) as err:
        run_round(cfg, make_inputs(cfg), DropoutSchedule.after_stage([0, 1, 2], 0))
    exc = err.value
    assert exc.reason == AbortReason.INSUFFICIENT_SURVIVORS and exc.stage == 1
    stages = exc.report.client_stages
    assert all(stages[i] == ClientStage.ABORTED for i in (3, 4))


def test_abort_zeroizes_client_secrets():
    h = _client_at_unmask()
    c = h.clients[0]
    c.abort()
    assert c.stage == ClientStage.ABORTED
    assert c.mask_keypair is None and c.enc_keypair is None and c.self_seed is None and c.held_shares == {}
    with pytest.raises(StateError):
        c.handle(SecAggMessage(Stage.UNMASK, SERVER_ID, UnmaskRequestPayload((0,), ())))


@pytest.mark.parametrize("stage", [0, 1, 2, 3])
def test_threshold_breach_at_each_stage(stage):
    cfg = validate({"share_num": 6, "threshold": 4, "min_num": 1}, 6, 2)
    with pytest.raises(RoundAborted) as err:
        run_round(cfg, make_inputs(cfg), DropoutSchedule.after_stage([0, 1, 2], stage))
    assert err.value.stage == stage + 1
    u = err.value.report.survivor_sets
    assert all(u[i] >= u[i + 1] for i in range(len(u) - 1))


@pytest.mark.parametrize("weight", [0, -2])
def test_client_rejects_non_positive_weight(weight):
    with pytest.raises(ValueError):
        SecAggClient(0, [1.0], weight)


@pytest.mark.parametrize("seed", range(3))
def test_arrival_order_does_not_matter(seed):
    cfg = validate({"share_num": 5, "threshold": 3, "min_num": 1}, 9, 20)
    inputs = make_inputs(cfg, seed)
    schedule = DropoutSchedule(((2, 2), (6, 1)))
    base = run_round(cfg, inputs, schedule, master_seed=seed)
    shuffled = run_round(cfg, inputs, schedule, master_seed=seed, shuffle_arrivals=True)
    assert np.array_equal(base.aggregate, shuffled.aggregate)
    assert base.survivor_sets == shuffled.survivor_sets
