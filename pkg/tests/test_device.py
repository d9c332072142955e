import json
import re

import numpy as np
import pytest

from dsekp.crypto import AeadEnvelope, SessionParams, aead_open, data_aad, derive_session_secret
from dsekp.device import (
    AckError,
    DsekpDevice,
    NotActive,
    Phase,
    PskDevice,
    SensorSource,
)
from dsekp.edge import EdgeServer, PskEdge
from dsekp.experiment import RunProfile, run
from dsekp.transport import DEFAULT_EPOCH_MS
from dsekp.wire import InitAck, encode

NOW = DEFAULT_EPOCH_MS


def _active(identity, seed=1):
    dev = DsekpDevice(identity, np.random.default_rng(seed))
    edge = EdgeServer([identity])
    init = dev.begin_session(NOW)
    dev.on_ack(edge.handle_init(init, NOW), NOW)
    return dev, edge


def test_begin_session_seeded(identity):
    a = DsekpDevice(identity, np.random.default_rng(42)).begin_session(NOW)
    b = DsekpDevice(identity, np.random.default_rng(42)).begin_session(NOW)
    assert (a.dev_nonce, a.sess_ctr) == (b.dev_nonce, b.sess_ctr)
    assert a.timestamp_t == NOW // 1000


def test_nonces_distinct_over_1000_sessions(identity):
    dev = DsekpDevice(identity, np.random.default_rng(0))
    nonces, prev_ctr = set(), None
    for i in range(1000):
        init = dev.begin_session(NOW + i)
        nonces.add(init.dev_nonce)
        assert init.sess_ctr != prev_ctr
        prev_ctr = init.sess_ctr
    assert len(nonces) == 1000


def test_init_verifies_at_edge(identity):
    dev = DsekpDevice(identity, np.random.default_rng(5))
    assert dev.phase is Phase.IDLE
    init = dev.begin_session(NOW)
    assert dev.phase is Phase.AWAIT_ACK
    ack = EdgeServer([identity]).handle_init(init, NOW)
    assert ack.status == "ok"
    dev.on_ack(ack, NOW)
    assert dev.phase is Phase.ACTIVE


def test_flipped_ack_proof(identity):
    dev = DsekpDevice(identity, np.random.default_rng(5))
    init = dev.begin_session(NOW)
    ack = EdgeServer([identity]).handle_init(init, NOW)
    for bit in range(256):
        proof = bytearray(ack.ack_proof)
        proof[bit // 8] ^= 1 << (bit % 8)
        with pytest.raises(AckError) as info:
            dev.on_ack(InitAck(ack.dev_id, ack.sess_ctr, ack.status, bytes(proof)), NOW)
        assert info.value.reason == "bad_proof"
        assert dev.phase is Phase.AWAIT_ACK


def test_stale_ack_counter(identity):
    dev = DsekpDevice(identity, np.random.default_rng(5))
    edge = EdgeServer([identity])
    old_ack = edge.handle_init(dev.begin_session(NOW), NOW)
    dev.simulate_reboot()
    dev.begin_session(NOW + 1000)
    with pytest.raises(AckError) as info:
        dev.on_ack(old_ack, NOW + 1000)
    assert info.value.reason == "ctr_mismatch"


def test_rejected_ack_and_unexpected(identity):
    dev = DsekpDevice(identity, np.random.default_rng(5))
    with pytest.raises(AckError) as info:
        dev.on_ack(InitAck(identity.dev_id, 1, "ok", bytes(32)))
    assert info.value.reason == "unexpected"
    init = dev.begin_session(NOW)
    with pytest.raises(AckError) as info:
        dev.on_ack(InitAck(identity.dev_id, init.sess_ctr, "rejected"))
    assert info.value.reason == "rejected"


def test_data_requires_active(identity):
    dev = DsekpDevice(identity, np.random.default_rng(5))
    with pytest.raises(NotActive):
        dev.next_data_packet(b"x", NOW)
    dev.begin_session(NOW)
    with pytest.raises(NotActive):
        dev.next_data_packet(b"x", NOW)


def test_sequence_and_ivs(identity):
    dev, edge = _active(identity)
    pkts = [dev.next_data_packet(b"reading", NOW + i) for i in range(3)]
    assert [p.seq for p in pkts] == [1, 2, 3]
    assert len({p.iv for p in pkts}) == 3
    assert all(p.iv[:4] == dev.session.iv_prefix for p in pkts)
    for p in pkts:
        assert edge.handle_data(p, NOW + 10).plaintext == "reading"


def test_packet_decrypts_with_oracle_key(identity):
    dev, _ = _active(identity)
    pkt = dev.next_data_packet(b"T=25.0C,H=50.0%", NOW)
    key = derive_session_secret(identity, dev.session.params).aes_key
    aad = data_aad(identity.dev_id, pkt.seq, pkt.sessctr_id)
    assert aead_open(key, AeadEnvelope(pkt.iv, pkt.ciphertext, pkt.tag), aad) == b"T=25.0C,H=50.0%"


def test_reboot_changes_secret(identity):
    dev, _ = _active(identity)
    old = dev.session.secret
    dev.simulate_reboot()
    assert dev.phase is Phase.IDLE and dev.session is None
    dev.begin_session(NOW + 2000)
    assert dev.session.secret != old


def test_reboot_from_await_ack(identity):
    dev = DsekpDevice(identity, np.random.default_rng(1))
    dev.begin_session(NOW)
    dev.simulate_reboot()
    assert dev.phase is Phase.IDLE


def test_retry_then_restart(identity):
    dev = DsekpDevice(identity, np.random.default_rng(1), ack_timeout_ms=5000, max_retries=3)
    first = dev.begin_session(NOW)
    assert dev.poll(NOW + 4999) is None
    t = NOW
    for _ in range(3):
        t += 5000
        assert dev.poll(t) == first
    t += 5000
    fresh = dev.poll(t)
    assert fresh is not None and fresh != first
    assert fresh.sess_ctr != first.sess_ctr


def test_session_timeout_rotates(identity):
    dev = DsekpDevice(identity, np.random.default_rng(1), session_timeout_ms=10_000)
    edge = EdgeServer([identity])
    dev.on_ack(edge.handle_init(dev.begin_session(NOW), NOW), NOW)
    assert dev.poll(NOW + 9_999) is None
    init = dev.poll(NOW + 10_000)
    assert init is not None and dev.phase is Phase.AWAIT_ACK


def test_sensor_format():
    src = SensorSource(np.random.default_rng(3))
    for _ in range(200):
        m = re.fullmatch(rb"T=(\d+\.\d)C,H=(\d+\.\d)%", src.read())
        assert m
        assert 20.0 <= float(m[1]) <= 35.0 and 30.0 <= float(m[2]) <= 90.0


def test_psk_packets(identity):
    psk = bytes(range(16))
    dev = PskDevice(identity.dev_id, psk, np.random.default_rng(2))
    edge = PskEdge({identity.dev_id: psk})
    pkts = [dev.next_psk_packet(b"T=20.0C,H=40.0%", NOW + i) for i in range(1000)]
    assert len({p.iv for p in pkts}) == 1000
    assert [p.seq for p in pkts[:3]] == [1, 2, 3]
    rec, dup = edge.handle_psk_data(pkts[0], NOW + 5)
    assert rec.plaintext == "T=20.0C,H=40.0%" and not dup
    assert list(json.loads(encode(pkts[0]))) == ["seq", "dev_id", "ciphertext", "iv", "tag", "sendts_ms"]
    with pytest.raises(ValueError):
        PskDevice("d", bytes(15), np.random.default_rng(0))


def test_thirty_reboots_lossless():
    result = run(RunProfile(mode="dsekp", packets=300, reboot_every=10, seed=4,
                            latency_base_ms=50, latency_jitter_ms=10))
    assert result.init_count() == 30
    assert result.ok_ack_count() == 30
    assert sum(c.sessions_started for c in result.clients) == 30
    assert len(result.server_log) == 300


def test_session_params_roundtrip_through_edge(identity):
    dev, edge = _active(identity)
    entry = edge.sessions[identity.dev_id][0]
    assert entry.params == SessionParams(dev.session.params.dev_nonce, dev.session.params.sess_ctr,
                                         dev.session.params.timestamp_t)
