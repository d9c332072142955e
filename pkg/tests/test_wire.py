import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsekp.crypto import InvalidDeviceId, SessionSecret
from dsekp.wire import (
    TOPIC_ACK_WILDCARD,
    TOPIC_DSEKP_DATA,
    TOPIC_INIT,
    TOPIC_PSK_DATA,
    DecodeError,
    DsekpDataPacket,
    InitAck,
    InitMessage,
    PskDataPacket,
    ack_topic,
    canonical_init_payload,
    decode,
    encode,
    make_init,
    make_ok_ack,
    topic_for,
)

SECRET = SessionSecret(bytes(range(32)))


def _psk(seq=7, dev_id="esp32-01", ct=b"\x01\x02\x03"):
    return PskDataPacket(seq, dev_id, ct, bytes(range(12)), bytes(range(16)), 1_700_000_000_123)


def _dsekp(seq=7, dev_id="esp32-01", ctr=513, ct=b"\x01\x02\x03"):
    return DsekpDataPacket(seq, dev_id, ctr, ct, bytes(range(12)), bytes(range(16)), 1_700_000_000_123)


def _init():
    return make_init("esp32-01", 513, 1_700_000_000, bytes(12), SECRET)


def test_topics_exact():
    assert (TOPIC_PSK_DATA, TOPIC_INIT, TOPIC_DSEKP_DATA) == ("psk/data", "dsekp/init", "dsekp/data")
    assert ack_topic("devA") == "dsekp/init/ack/devA"
    assert TOPIC_ACK_WILDCARD == "dsekp/init/ack/+"


# -- canonical payload -----------------------------------------------------------

def test_canonical_payload_minimal():
    assert canonical_init_payload("A", 0, 0, bytes(12)) == bytes.fromhex("4100000000000000") + bytes(12)
    assert len(canonical_init_payload("A", 0, 0, bytes(12))) == 20


def test_canonical_payload_injective_in_t():
    assert canonical_init_payload("A", 1, 1, bytes(12)) != canonical_init_payload("A", 1, 2, bytes(12))


def test_canonical_payload_length_sweep():
    rng = np.random.default_rng(11)
    for _ in range(100):
        dev_id = "d" * int(rng.integers(1, 30))
        raw = canonical_init_payload(dev_id, int(rng.integers(1 << 16)), int(rng.integers(1 << 32)), rng.bytes(12))
        assert len(raw) == len(dev_id) + 1 + 2 + 4 + 12


def test_canonical_payload_rejects_nul():
    with pytest.raises(InvalidDeviceId):
        canonical_init_payload("a\x00b", 0, 0, bytes(12))


def test_ok_ack_proof_binds_payload():
    msg = _init()
    ack = make_ok_ack(msg, SECRET)
    assert ack.status == "ok" and len(ack.ack_proof) == 32
    assert ack.ack_proof != msg.init_proof


# -- golden encodings ---------------------------------------------------------------

GOLDEN_PSK = (
    '{"seq":7,"dev_id":"esp32-01","ciphertext":"010203","iv":"000102030405060708090a0b",'
    '"tag":"000102030405060708090a0b0c0d0e0f","sendts_ms":1700000000123}'
)
GOLDEN_DSEKP = (
    '{"seq":7,"dev_id":"esp32-01","sessctr_id":513,"ciphertext":"010203","iv":"000102030405060708090a0b",'
    '"tag":"000102030405060708090a0b0c0d0e0f","sendts_ms":1700000000123}'
)


def test_golden_psk():
    assert encode(_psk()).decode() == GOLDEN_PSK
    assert list(json.loads(GOLDEN_PSK)) == ["seq", "dev_id", "ciphertext", "iv", "tag", "sendts_ms"]


def test_golden_dsekp():
    assert encode(_dsekp()).decode() == GOLDEN_DSEKP
    assert list(json.loads(GOLDEN_DSEKP)) == ["seq", "dev_id", "sessctr_id", "ciphertext", "iv", "tag", "sendts_ms"]


def test_init_and_ack_key_order():
    msg = _init()
    assert list(json.loads(encode(msg))) == ["dev_id", "sessctr_id", "t", "dev_nonce", "init_proof"]
    ok = make_ok_ack(msg, SECRET)
    assert list(json.loads(encode(ok))) == ["dev_id", "sessctr_id", "status", "ack_proof"]
    rej = InitAck("esp32-01", 513, "rejected")
    assert list(json.loads(encode(rej))) == ["dev_id", "sessctr_id", "status"]


def test_encoding_single_line_lowercase_hex():
    body = encode(_init()).decode()
    assert "\n" not in body and " " not in body
    obj = json.loads(body)
    assert obj["init_proof"] == obj["init_proof"].lower()


def test_encoding_deterministic():
    assert encode(_dsekp()) == encode(_dsekp())


def test_structural_delta_over_random_payloads():
    rng = np.random.default_rng(21)
    deltas = set()
    for _ in range(1000):
        ct = rng.bytes(int(rng.integers(0, 40)))
        ctr = int(rng.integers(1 << 16))
        seq = int(rng.integers(1, 1 << 40))
        psk = PskDataPacket(seq, "esp32-01", ct, rng.bytes(12), rng.bytes(16), 1_700_000_000_000)
        dse = DsekpDataPacket(seq, "esp32-01", ctr, ct, psk.iv, psk.tag, 1_700_000_000_000)
        delta = len(encode(dse)) - len(encode(psk))
        assert delta == len(f'"sessctr_id":{ctr},')
        deltas.add(delta)
    assert min(deltas) >= 14 and max(deltas) <= 24


# -- roundtrip ----------------------------------------------------------------------

@pytest.mark.parametrize("msg", [_psk(), _dsekp(), _init(), make_ok_ack(_init(), SECRET), InitAck("esp32-01", 1, "rejected")],
                         ids=["psk", "dsekp", "init", "ack-ok", "ack-rejected"])
def test_roundtrip(msg):
    assert decode(topic_for(msg), encode(msg)) == msg


dev_ids = st.text(alphabet=st.characters(min_codepoint=0x21, max_codepoint=0x7e, blacklist_characters="/#+"),
                  min_size=1, max_size=16)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**64 - 1), dev_ids, st.integers(0, 2**16 - 1), st.binary(max_size=48),
       st.binary(min_size=12, max_size=12), st.binary(min_size=16, max_size=16), st.integers(0, 2**64 - 1))
def test_dsekp_roundtrip_property(seq, dev_id, ctr, ct, iv, tag, ts):
    pkt = DsekpDataPacket(seq, dev_id, ctr, ct, iv, tag, ts)
    body = encode(pkt)
    assert decode(TOPIC_DSEKP_DATA, body) == pkt
    assert encode(decode(TOPIC_DSEKP_DATA, body)) == body


@settings(max_examples=100, deadline=None)
@given(dev_ids, st.integers(0, 2**16 - 1), st.integers(0, 2**32 - 1), st.binary(min_size=12, max_size=12))
def test_init_roundtrip_property(dev_id, ctr, t, nonce):
    msg = make_init(dev_id, ctr, t, nonce, SECRET)
    assert decode(TOPIC_INIT, encode(msg)) == msg


# -- decode errors --------------------------------------------------------------------

def _reason(topic, body):
    with pytest.raises(DecodeError) as info:
        decode(topic, body)
    return info.value.reason


def test_unknown_topic():
    assert _reason("foo/bar", encode(_psk())) == "unknown_topic"
    assert _reason("dsekp/init/ack/a/b", b"{}") == "unknown_topic"


def test_bad_json():
    assert _reason(TOPIC_PSK_DATA, b"{not json") == "bad_json"
    assert _reason(TOPIC_PSK_DATA, b"[1,2]") == "bad_json"
    assert _reason(TOPIC_PSK_DATA, b"\xff\xfe") == "bad_json"


def test_short_iv():
    obj = json.loads(encode(_psk()))
    obj["iv"] = "00" * 11
    assert _reason(TOPIC_PSK_DATA, json.dumps(obj).encode()) == "wrong_field_length"


@pytest.mark.parametrize("field_,value", [("seq", "7"), ("seq", -1), ("seq", 1.0), ("seq", True),
                                          ("sessctr_id", 1 << 16), ("iv", "0A" * 12), ("tag", "zz" * 16),
                                          ("dev_id", ""), ("dev_id", 5), ("ciphertext", "abc")])
def test_bad_fields(field_, value):
    obj = json.loads(encode(_dsekp()))
    obj[field_] = value
    assert _reason(TOPIC_DSEKP_DATA, json.dumps(obj).encode()) in ("bad_field", "wrong_field_length")


def test_missing_key():
    obj = json.loads(encode(_dsekp()))
    del obj["tag"]
    assert _reason(TOPIC_DSEKP_DATA, json.dumps(obj).encode()) == "wrong_key_set"


def test_psk_body_on_dsekp_topic():
    assert _reason(TOPIC_DSEKP_DATA, encode(_psk())) == "wrong_key_set"


def test_ack_topic_must_match_body():
    ack = make_ok_ack(_init(), SECRET)
    assert _reason(ack_topic("other"), encode(ack)) == "bad_field"


def test_injected_keys_fuzz():
    rng = np.random.default_rng(8)
    msgs = [_psk(), _dsekp(), _init(), make_ok_ack(_init(), SECRET)]
    for i in range(400):
        msg = msgs[i % len(msgs)]
        obj = json.loads(encode(msg))
        key = "k" + rng.bytes(4).hex()
        obj[key] = int(rng.integers(100))
        assert _reason(topic_for(msg), json.dumps(obj).encode()) == "wrong_key_set"


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=200))
def test_garbage_never_crashes(body):
    for topic in (TOPIC_PSK_DATA, TOPIC_DSEKP_DATA, TOPIC_INIT, ack_topic("x")):
        try:
            decode(topic, body)
        except DecodeError:
            pass


def test_init_wrong_proof_length():
    obj = json.loads(encode(_init()))
    obj["init_proof"] = obj["init_proof"][:-2]
    assert _reason(TOPIC_INIT, json.dumps(obj).encode()) == "wrong_field_length"


def test_decoded_init_is_plain_message():
    msg = decode(TOPIC_INIT, encode(_init()))
    assert isinstance(msg, InitMessage)
    assert msg.payload() == canonical_init_payload("esp32-01", 513, 1_700_000_000, bytes(12))
