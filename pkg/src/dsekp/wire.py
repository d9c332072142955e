"""On-wire message types and their canonical single-line JSON encodings.

Binary fields travel as lowercase hex. Key order is fixed so that the
byte length of an encoded packet is a pure function of its contents.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Union

from .crypto import (
    IV_LEN,
    NONCE_LEN,
    PROOF_LEN,
    TAG_LEN,
    InvalidDeviceId,
    SessionSecret,
    compute_hmac_proof,
)

TOPIC_PSK_DATA = "psk/data"
TOPIC_INIT = "dsekp/init"
TOPIC_ACK_PREFIX = "dsekp/init/ack/"
TOPIC_DSEKP_DATA = "dsekp/data"
TOPIC_ACK_WILDCARD = TOPIC_ACK_PREFIX + "+"

STATUS_OK = "ok"
STATUS_REJECTED = "rejected"

_U16 = 1 << 16
_U32 = 1 << 32
_U64 = 1 << 64


def ack_topic(dev_id: str) -> str:
    return TOPIC_ACK_PREFIX + dev_id


class DecodeError(ValueError):
    def __init__(self, reason: str, detail: str = "") -> None:
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason


@dataclass(frozen=True)
class InitMessage:
    dev_id: str
    sess_ctr: int
    timestamp_t: int
    dev_nonce: bytes
    init_proof: bytes

    def payload(self) -> bytes:
        return canonical_init_payload(self.dev_id, self.sess_ctr, self.timestamp_t, self.dev_nonce)


@dataclass(frozen=True)
class InitAck:
    dev_id: str
    sess_ctr: int
    status: str
    ack_proof: bytes | None = None


@dataclass(frozen=True)
class PskDataPacket:
    seq: int
    dev_id: str
    ciphertext: bytes
    iv: bytes
    tag: bytes
    sendts_ms: int


@dataclass(frozen=True)
class DsekpDataPacket:
    seq: int
    dev_id: str
    sessctr_id: int
    ciphertext: bytes
    iv: bytes
    tag: bytes
    sendts_ms: int


WireMessage = Union[InitMessage, InitAck, PskDataPacket, DsekpDataPacket]


def canonical_init_payload(dev_id: str, sess_ctr: int, timestamp_t: int, dev_nonce: bytes) -> bytes:
    """``utf8(dev_id) || 0x00 || ctr(2, BE) || t(4, BE) || nonce(12)``."""
    raw_id = dev_id.encode("utf-8")
    if b"\x00" in raw_id:
        raise InvalidDeviceId("dev_id may not contain NUL")
    return raw_id + b"\x00" + sess_ctr.to_bytes(2, "big") + timestamp_t.to_bytes(4, "big") + dev_nonce


def ack_payload(init_payload: bytes) -> bytes:
    return b"ACK" + init_payload


def make_init(dev_id: str, sess_ctr: int, timestamp_t: int, dev_nonce: bytes, secret: SessionSecret) -> InitMessage:
    payload = canonical_init_payload(dev_id, sess_ctr, timestamp_t, dev_nonce)
    return InitMessage(dev_id, sess_ctr, timestamp_t, dev_nonce, compute_hmac_proof(secret, payload))


def make_ok_ack(msg: InitMessage, secret: SessionSecret) -> InitAck:
    proof = compute_hmac_proof(secret, ack_payload(msg.payload()))
    return InitAck(msg.dev_id, msg.sess_ctr, STATUS_OK, proof)


def topic_for(msg: WireMessage) -> str:
    if isinstance(msg, PskDataPacket):
        return TOPIC_PSK_DATA
    if isinstance(msg, DsekpDataPacket):
        return TOPIC_DSEKP_DATA
    if isinstance(msg, InitMessage):
        return TOPIC_INIT
    return ack_topic(msg.dev_id)


def _fields(msg: WireMessage) -> list[tuple[str, object]]:
    if isinstance(msg, PskDataPacket):
        return [
            ("seq", msg.seq),
            ("dev_id", msg.dev_id),
            ("ciphertext", msg.ciphertext.hex()),
            ("iv", msg.iv.hex()),
            ("tag", msg.tag.hex()),
            ("sendts_ms", msg.sendts_ms),
        ]
    if isinstance(msg, DsekpDataPacket):
        return [
            ("seq", msg.seq),
            ("dev_id", msg.dev_id),
            ("sessctr_id", msg.sessctr_id),
            ("ciphertext", msg.ciphertext.hex()),
            ("iv", msg.iv.hex()),
            ("tag", msg.tag.hex()),
            ("sendts_ms", msg.sendts_ms),
        ]
    if isinstance(msg, InitMessage):
        return [
            ("dev_id", msg.dev_id),
            ("sessctr_id", msg.sess_ctr),
            ("t", msg.timestamp_t),
            ("dev_nonce", msg.dev_nonce.hex()),
            ("init_proof", msg.init_proof.hex()),
        ]
    if isinstance(msg, InitAck):
        out: list[tuple[str, object]] = [
            ("dev_id", msg.dev_id),
            ("sessctr_id", msg.sess_ctr),
            ("status", msg.status),
        ]
        if msg.ack_proof is not None:
            out.append(("ack_proof", msg.ack_proof.hex()))
        return out
    raise TypeError(f"not a wire message: {type(msg).__name__}")


def encode(msg: WireMessage) -> bytes:
    return json.dumps(dict(_fields(msg)), separators=(",", ":"), ensure_ascii=False).encode("utf-8")


_PSK_KEYS = ("seq", "dev_id", "ciphertext", "iv", "tag", "sendts_ms")
_DSEKP_KEYS = ("seq", "dev_id", "sessctr_id", "ciphertext", "iv", "tag", "sendts_ms")
_INIT_KEYS = ("dev_id", "sessctr_id", "t", "dev_nonce", "init_proof")
_ACK_KEYS = ("dev_id", "sessctr_id", "status")


def _int(obj: dict, key: str, bound: int) -> int:
    val = obj[key]
    if type(val) is not int or not 0 <= val < bound:
        raise DecodeError("bad_field", f"{key} must be an integer in [0, {bound})")
    return val


def _hex(obj: dict, key: str, length: int | None = None) -> bytes:
    val = obj[key]
    if not isinstance(val, str) or val != val.lower():
        raise DecodeError("bad_field", f"{key} must be a lowercase hex string")
    try:
        raw = bytes.fromhex(val)
    except ValueError:
        raise DecodeError("bad_field", f"{key} is not valid hex") from None
    if len(val) != 2 * len(raw):
        raise DecodeError("bad_field", f"{key} is not valid hex")
    if length is not None and len(raw) != length:
        raise DecodeError("wrong_field_length", f"{key} must be {length} bytes, got {len(raw)}")
    return raw


def _dev_id(obj: dict) -> str:
    val = obj["dev_id"]
    if not isinstance(val, str) or not val:
        raise DecodeError("bad_field", "dev_id must be a non-empty string")
    return val


def _check_keys(obj: dict, expected: tuple[str, ...]) -> None:
    if set(obj) != set(expected):
        raise DecodeError("wrong_key_set", f"got {sorted(obj)}, expected {sorted(expected)}")


def decode(topic: str, body: bytes) -> WireMessage:
    if topic == TOPIC_PSK_DATA:
        kind = "psk"
    elif topic == TOPIC_DSEKP_DATA:
        kind = "dsekp"
    elif topic == TOPIC_INIT:
        kind = "init"
    elif topic.startswith(TOPIC_ACK_PREFIX) and "/" not in topic[len(TOPIC_ACK_PREFIX):]:
        kind = "ack"
    else:
        raise DecodeError("unknown_topic", topic)

    try:
        obj = json.loads(body)
    except (ValueError, UnicodeDecodeError) as exc:
        raise DecodeError("bad_json", str(exc)) from None
    if not isinstance(obj, dict):
        raise DecodeError("bad_json", "top-level value is not an object")

    if kind == "psk":
        _check_keys(obj, _PSK_KEYS)
        return PskDataPacket(
            seq=_int(obj, "seq", _U64),
            dev_id=_dev_id(obj),
            ciphertext=_hex(obj, "ciphertext"),
            iv=_hex(obj, "iv", IV_LEN),
            tag=_hex(obj, "tag", TAG_LEN),
            sendts_ms=_int(obj, "sendts_ms", _U64),
        )
    if kind == "dsekp":
        _check_keys(obj, _DSEKP_KEYS)
        return DsekpDataPacket(
            seq=_int(obj, "seq", _U64),
            dev_id=_dev_id(obj),
            sessctr_id=_int(obj, "sessctr_id", _U16),
            ciphertext=_hex(obj, "ciphertext"),
            iv=_hex(obj, "iv", IV_LEN),
            tag=_hex(obj, "tag", TAG_LEN),
            sendts_ms=_int(obj, "sendts_ms", _U64),
        )
    if kind == "init":
        _check_keys(obj, _INIT_KEYS)
        return InitMessage(
            dev_id=_dev_id(obj),
            sess_ctr=_int(obj, "sessctr_id", _U16),
            timestamp_t=_int(obj, "t", _U32),
            dev_nonce=_hex(obj, "dev_nonce", NONCE_LEN),
            init_proof=_hex(obj, "init_proof", PROOF_LEN),
        )

    status = obj.get("status")
    if status == STATUS_OK:
        _check_keys(obj, _ACK_KEYS + ("ack_proof",))
        proof = _hex(obj, "ack_proof", PROOF_LEN)
    elif status == STATUS_REJECTED:
        _check_keys(obj, _ACK_KEYS)
        proof = None
    else:
        if set(obj) - set(_ACK_KEYS + ("ack_proof",)) or not set(_ACK_KEYS) <= set(obj):
            raise DecodeError("wrong_key_set", f"got {sorted(obj)}")
        raise DecodeError("bad_field", f"unknown ack status {status!r}")
    dev_id = _dev_id(obj)
    if topic[len(TOPIC_ACK_PREFIX):] != dev_id:
        raise DecodeError("bad_field", "ack topic does not match dev_id")
    return InitAck(dev_id, _int(obj, "sessctr_id", _U16), status, proof)
