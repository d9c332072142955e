"""Symmetric primitives and per-session key derivation.

A session secret is HKDF-SHA256 over ``dev_secret || nonce || ctr || t``
salted with the edge salt. The first 16 bytes key AES-128-GCM; the full
32 bytes key the HMAC proofs exchanged during the init/ack handshake.
"""

from __future__ import annotations

import hashlib
import hmac
import re
from dataclasses import dataclass

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

NONCE_LEN = 12
IV_LEN = 12
TAG_LEN = 16
SECRET_LEN = 32
AES_KEY_LEN = 16
PROOF_LEN = 32
IV_PREFIX_LEN = 4

_ILLEGAL_DEV_ID = re.compile(r"[/#+\s\x00]")


class AuthFailure(Exception):
    """AEAD tag did not verify (tampering, wrong key or wrong session)."""


class InvalidDeviceId(ValueError):
    pass


def check_dev_id(dev_id: str) -> None:
    if not dev_id or _ILLEGAL_DEV_ID.search(dev_id):
        raise InvalidDeviceId(f"illegal device id {dev_id!r}")


@dataclass(frozen=True)
class DeviceIdentity:
    """Long-term credentials provisioned out of band on device and edge."""

    dev_id: str
    dev_secret: bytes
    edge_salt: bytes

    def __post_init__(self) -> None:
        check_dev_id(self.dev_id)
        if len(self.dev_secret) < 16:
            raise ValueError("dev_secret must be at least 16 bytes")
        if len(self.edge_salt) < 16:
            raise ValueError("edge_salt must be at least 16 bytes")


@dataclass(frozen=True)
class SessionParams:
    dev_nonce: bytes
    sess_ctr: int
    timestamp_t: int

    def __post_init__(self) -> None:
        if len(self.dev_nonce) != NONCE_LEN:
            raise ValueError(f"dev_nonce must be {NONCE_LEN} bytes")
        if not 0 <= self.sess_ctr < 1 << 16:
            raise ValueError("sess_ctr must fit in 2 bytes")
        if not 0 <= self.timestamp_t < 1 << 32:
            raise ValueError("timestamp_t must fit in 4 bytes")


@dataclass(frozen=True)
class SessionSecret:
    bytes: bytes

    def __post_init__(self) -> None:
        if len(self.bytes) != SECRET_LEN:
            raise ValueError(f"session secret must be {SECRET_LEN} bytes")

    @property
    def aes_key(self) -> bytes:
        return self.bytes[:AES_KEY_LEN]

    def __repr__(self) -> str:
        return "SessionSecret(<redacted>)"


@dataclass(frozen=True)
class AeadEnvelope:
    iv: bytes
    ciphertext: bytes
    tag: bytes

    def __post_init__(self) -> None:
        if len(self.iv) != IV_LEN:
            raise ValueError(f"iv must be {IV_LEN} bytes")
        if len(self.tag) != TAG_LEN:
            raise ValueError(f"tag must be {TAG_LEN} bytes")


def hkdf_sha256(salt: bytes, ikm: bytes, info: bytes = b"", length: int = SECRET_LEN) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt, info=info).derive(ikm)


def build_ikm(identity: DeviceIdentity, params: SessionParams) -> bytes:
    return (
        identity.dev_secret
        + params.dev_nonce
        + params.sess_ctr.to_bytes(2, "big")
        + params.timestamp_t.to_bytes(4, "big")
    )


def derive_session_secret(identity: DeviceIdentity, params: SessionParams) -> SessionSecret:
    """Derive the 32-byte session secret; no context info is mixed in."""
    return SessionSecret(hkdf_sha256(identity.edge_salt, build_ikm(identity, params)))


def compute_hmac_proof(secret: SessionSecret, payload: bytes) -> bytes:
    return hmac.new(secret.bytes, payload, hashlib.sha256).digest()


def verify_hmac_proof(secret: SessionSecret, payload: bytes, proof: bytes) -> bool:
    return hmac.compare_digest(compute_hmac_proof(secret, payload), proof)


def make_iv(prefix: bytes, msg_seq: int) -> bytes:
    """Deterministic GCM nonce: 4-byte per-session prefix + 8-byte counter."""
    if len(prefix) != IV_PREFIX_LEN:
        raise ValueError(f"iv prefix must be {IV_PREFIX_LEN} bytes")
    if not 0 <= msg_seq < 1 << 64:
        raise ValueError("msg_seq out of range")
    return prefix + msg_seq.to_bytes(8, "big")


def data_aad(dev_id: str, msg_seq: int, sess_ctr: int | None = None) -> bytes:
    """Header bytes bound into the tag. Baseline packets carry no counter."""
    head = dev_id.encode("utf-8") + b"\x00"
    if sess_ctr is not None:
        head += sess_ctr.to_bytes(2, "big")
    return head + msg_seq.to_bytes(8, "big")


def aead_seal(key: bytes, iv: bytes, aad: bytes, plaintext: bytes) -> AeadEnvelope:
    if len(key) != AES_KEY_LEN:
        raise ValueError(f"key must be {AES_KEY_LEN} bytes")
    if len(iv) != IV_LEN:
        raise ValueError(f"iv must be {IV_LEN} bytes")
    sealed = AESGCM(key).encrypt(iv, plaintext, aad)
    return AeadEnvelope(iv=iv, ciphertext=sealed[:-TAG_LEN], tag=sealed[-TAG_LEN:])


def aead_open(key: bytes, envelope: AeadEnvelope, aad: bytes) -> bytes:
    if len(key) != AES_KEY_LEN:
        raise ValueError(f"key must be {AES_KEY_LEN} bytes")
    try:
        return AESGCM(key).decrypt(envelope.iv, envelope.ciphertext + envelope.tag, aad)
    except InvalidTag:
        raise AuthFailure("authentication tag mismatch") from None
