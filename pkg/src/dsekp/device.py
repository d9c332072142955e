"""Client-side state machines: the rekeying device and the static-PSK baseline."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .crypto import (
    AES_KEY_LEN,
    IV_LEN,
    IV_PREFIX_LEN,
    NONCE_LEN,
    DeviceIdentity,
    SessionParams,
    SessionSecret,
    aead_seal,
    data_aad,
    derive_session_secret,
    make_iv,
    verify_hmac_proof,
)
from .wire import (
    STATUS_OK,
    DsekpDataPacket,
    InitAck,
    InitMessage,
    PskDataPacket,
    ack_payload,
    make_init,
)

DEFAULT_ACK_TIMEOUT_MS = 5_000
DEFAULT_MAX_RETRIES = 3
DEFAULT_SESSION_TIMEOUT_MS = 3_600_000


class Phase(enum.Enum):
    IDLE = "idle"
    AWAIT_ACK = "await_ack"
    ACTIVE = "active"


class AckError(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason  # bad_proof | ctr_mismatch | rejected


class NotActive(RuntimeError):
    pass


class SensorSource:
    """DHT11-style synthetic readings, e.g. ``T=27.4C,H=61.0%``."""

    def __init__(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def read(self) -> bytes:
        temp = self._rng.uniform(20.0, 35.0)
        hum = self._rng.uniform(30.0, 90.0)
        return f"T={temp:.1f}C,H={hum:.1f}%".encode("ascii")


@dataclass
class SessionContext:
    params: SessionParams
    secret: SessionSecret
    iv_prefix: bytes
    init: InitMessage
    init_sent_at: int
    msg_seq: int = 1
    established_at: int | None = None
    retries: int = 0


class DsekpDevice:
    def __init__(
        self,
        identity: DeviceIdentity,
        rng: np.random.Generator,
        ack_timeout_ms: int = DEFAULT_ACK_TIMEOUT_MS,
        max_retries: int = DEFAULT_MAX_RETRIES,
        session_timeout_ms: int = DEFAULT_SESSION_TIMEOUT_MS,
    ) -> None:
        self.identity = identity
        self.rng = rng
        self.ack_timeout_ms = ack_timeout_ms
        self.max_retries = max_retries
        self.session_timeout_ms = session_timeout_ms
        self.phase = Phase.IDLE
        self.session: SessionContext | None = None
        self._last_ctr: int | None = None

    @property
    def dev_id(self) -> str:
        return self.identity.dev_id

    def begin_session(self, now_ms: int) -> InitMessage:
        """Draw fresh nonce/counter, derive the session secret and build the init."""
        nonce = self.rng.bytes(NONCE_LEN)
        ctr = int(self.rng.integers(0, 1 << 16))
        while ctr == self._last_ctr:
            ctr = int(self.rng.integers(0, 1 << 16))
        params = SessionParams(nonce, ctr, (now_ms // 1000) & 0xFFFFFFFF)
        secret = derive_session_secret(self.identity, params)
        init = make_init(self.dev_id, ctr, params.timestamp_t, nonce, secret)
        self.session = SessionContext(params, secret, self.rng.bytes(IV_PREFIX_LEN), init, now_ms)
        self._last_ctr = ctr
        self.phase = Phase.AWAIT_ACK
        return init

    def on_ack(self, ack: InitAck, now_ms: int = 0) -> None:
        if self.phase is not Phase.AWAIT_ACK or self.session is None:
            raise AckError("unexpected")
        if ack.sess_ctr != self.session.params.sess_ctr:
            raise AckError("ctr_mismatch")
        if ack.status != STATUS_OK or ack.ack_proof is None:
            raise AckError("rejected")
        if not verify_hmac_proof(self.session.secret, ack_payload(self.session.init.payload()), ack.ack_proof):
            raise AckError("bad_proof")
        self.session.established_at = now_ms
        self.phase = Phase.ACTIVE

    def poll(self, now_ms: int) -> InitMessage | None:
        """Timer hook. Returns an init to (re)publish, or None.

        A missing ack is retried with the same init up to ``max_retries``
        times; after that a brand-new session is started. An active session
        older than ``session_timeout_ms`` is rotated.
        """
        sess = self.session
        if self.phase is Phase.AWAIT_ACK and sess is not None:
            if now_ms - sess.init_sent_at < self.ack_timeout_ms:
                return None
            if sess.retries < self.max_retries:
                sess.retries += 1
                sess.init_sent_at = now_ms
                return sess.init
            return self.begin_session(now_ms)
        if self.phase is Phase.ACTIVE and sess is not None and sess.established_at is not None:
            if now_ms - sess.established_at >= self.session_timeout_ms:
                return self.begin_session(now_ms)
        return None

    def next_data_packet(self, plaintext: bytes, now_ms: int) -> DsekpDataPacket:
        if self.phase is not Phase.ACTIVE or self.session is None:
            raise NotActive(f"device {self.dev_id} is {self.phase.value}")
        sess = self.session
        seq = sess.msg_seq
        iv = make_iv(sess.iv_prefix, seq)
        aad = data_aad(self.dev_id, seq, sess.params.sess_ctr)
        env = aead_seal(sess.secret.aes_key, iv, aad, plaintext)
        sess.msg_seq += 1
        return DsekpDataPacket(seq, self.dev_id, sess.params.sess_ctr, env.ciphertext, env.iv, env.tag, int(now_ms))

    def simulate_reboot(self) -> None:
        """Forget the session; the next begin_session yields a new key."""
        self.session = None
        self.phase = Phase.IDLE


class PskDevice:
    """Baseline client: one static AES-128 key, random IVs, lifetime counter."""

    def __init__(self, dev_id: str, psk: bytes, rng: np.random.Generator) -> None:
        if len(psk) != AES_KEY_LEN:
            raise ValueError(f"psk must be {AES_KEY_LEN} bytes")
        self.dev_id = dev_id
        self.psk = psk
        self.rng = rng
        self.seq = 1

    def next_psk_packet(self, plaintext: bytes, now_ms: int) -> PskDataPacket:
        seq = self.seq
        env = aead_seal(self.psk, self.rng.bytes(IV_LEN), data_aad(self.dev_id, seq), plaintext)
        self.seq += 1
        return PskDataPacket(seq, self.dev_id, env.ciphertext, env.iv, env.tag, int(now_ms))
