"""Edge-side verifier: session establishment, replay guard, decryption.

The store keeps at most ``capacity`` sessions per device, most recent
first. Only public session parameters are ever persisted; secrets are
re-derived from the identity registry on load.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

from .crypto import (
    AES_KEY_LEN,
    AeadEnvelope,
    AuthFailure,
    DeviceIdentity,
    SessionParams,
    SessionSecret,
    aead_open,
    data_aad,
    derive_session_secret,
    verify_hmac_proof,
)
from .metrics.logs import ServerLogRecord, iso_ms
from .wire import (
    STATUS_REJECTED,
    DsekpDataPacket,
    InitAck,
    InitMessage,
    PskDataPacket,
    encode,
    make_ok_ack,
)

SESSION_CAPACITY = 5
TIMESTAMP_SKEW_S = 120


class InitRejection(Exception):
    """Init refused. ``ack`` is the proof-less rejection to send back."""

    def __init__(self, reason: str, ack: InitAck) -> None:
        super().__init__(reason)
        self.reason = reason  # unknown_device | bad_proof | stale_timestamp | duplicate_ctr
        self.ack = ack


class DataRejection(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason  # unknown_session | replay | auth_failure


class InvariantViolation(AssertionError):
    pass


@dataclass
class EdgeSessionEntry:
    params: SessionParams
    secret: SessionSecret
    established_at: int
    highest_seq_seen: int = 0


def _server_record(pkt, sessctr_id, plaintext: bytes, now_ms: int, payload_size: int) -> ServerLogRecord:
    return ServerLogRecord(
        seq=pkt.seq,
        timestamp=iso_ms(now_ms),
        dev_id=pkt.dev_id,
        sessctr_id=sessctr_id,
        ciphertext=pkt.ciphertext.hex(),
        iv=pkt.iv.hex(),
        tag=pkt.tag.hex(),
        plaintext=plaintext.decode("utf-8", "replace"),
        recvts_ms=int(now_ms),
        latency_ms=float(now_ms - pkt.sendts_ms),
        payload_size=payload_size,
        bin_1s=int(now_ms) // 1000,
    )


class EdgeServer:
    def __init__(self, identities=(), capacity: int = SESSION_CAPACITY, skew_s: int = TIMESTAMP_SKEW_S) -> None:
        self.capacity = capacity
        self.skew_s = skew_s
        self.registry: dict[str, DeviceIdentity] = {}
        self.sessions: dict[str, list[EdgeSessionEntry]] = {}
        # proofs of inits accepted within the freshness window; blocks
        # replays of inits whose session was already evicted
        self._recent_inits: dict[str, dict[bytes, int]] = {}
        self.outcomes: Counter[str] = Counter()
        for ident in identities:
            self.register(ident)

    def register(self, identity: DeviceIdentity) -> None:
        self.registry[identity.dev_id] = identity

    def session_count(self, dev_id: str) -> int:
        return len(self.sessions.get(dev_id, ()))

    def live_counters(self, dev_id: str) -> list[int]:
        return [e.params.sess_ctr for e in self.sessions.get(dev_id, ())]

    def _find(self, dev_id: str, sess_ctr: int) -> EdgeSessionEntry | None:
        for entry in self.sessions.get(dev_id, ()):
            if entry.params.sess_ctr == sess_ctr:
                return entry
        return None

    def _reject_init(self, msg: InitMessage, reason: str) -> InitRejection:
        self.outcomes["init:" + reason] += 1
        return InitRejection(reason, InitAck(msg.dev_id, msg.sess_ctr, STATUS_REJECTED))

    def handle_init(self, msg: InitMessage, now_ms: int) -> InitAck:
        identity = self.registry.get(msg.dev_id)
        if identity is None:
            raise self._reject_init(msg, "unknown_device")
        now_s = now_ms // 1000
        if abs(msg.timestamp_t - now_s) > self.skew_s:
            raise self._reject_init(msg, "stale_timestamp")
        params = SessionParams(msg.dev_nonce, msg.sess_ctr, msg.timestamp_t)
        secret = derive_session_secret(identity, params)
        if not verify_hmac_proof(secret, msg.payload(), msg.init_proof):
            raise self._reject_init(msg, "bad_proof")
        recent = self._recent_inits.setdefault(msg.dev_id, {})
        for proof, t in list(recent.items()):
            if abs(t - now_s) > self.skew_s:
                del recent[proof]
        if self._find(msg.dev_id, msg.sess_ctr) is not None or msg.init_proof in recent:
            raise self._reject_init(msg, "duplicate_ctr")

        entries = self.sessions.setdefault(msg.dev_id, [])
        entries.insert(0, EdgeSessionEntry(params, secret, int(now_ms)))
        del entries[self.capacity:]
        recent[msg.init_proof] = msg.timestamp_t
        self.outcomes["init:ok"] += 1
        self.check_invariants(msg.dev_id)
        return make_ok_ack(msg, secret)

    def handle_data(self, pkt: DsekpDataPacket, now_ms: int, payload_size: int | None = None) -> ServerLogRecord:
        """Authenticate first, then apply the strictly-increasing seq rule."""
        entry = self._find(pkt.dev_id, pkt.sessctr_id)
        if entry is None:
            self.outcomes["data:unknown_session"] += 1
            raise DataRejection("unknown_session")
        aad = data_aad(pkt.dev_id, pkt.seq, pkt.sessctr_id)
        try:
            plaintext = aead_open(entry.secret.aes_key, AeadEnvelope(pkt.iv, pkt.ciphertext, pkt.tag), aad)
        except AuthFailure:
            self.outcomes["data:auth_failure"] += 1
            raise DataRejection("auth_failure") from None
        if pkt.seq <= entry.highest_seq_seen:
            self.outcomes["data:replay"] += 1
            raise DataRejection("replay")
        entry.highest_seq_seen = pkt.seq
        self.outcomes["data:ok"] += 1
        size = len(encode(pkt)) if payload_size is None else payload_size
        return _server_record(pkt, pkt.sessctr_id, plaintext, now_ms, size)

    def check_invariants(self, dev_id: str) -> None:
        entries = self.sessions.get(dev_id, [])
        if len(entries) > self.capacity:
            raise InvariantViolation(f"{dev_id}: {len(entries)} sessions exceed capacity {self.capacity}")
        ctrs = [e.params.sess_ctr for e in entries]
        if len(set(ctrs)) != len(ctrs):
            raise InvariantViolation(f"{dev_id}: duplicate session counters {ctrs}")

    # -- persistence ---------------------------------------------------
    def to_json(self) -> list[dict]:
        out = []
        for dev_id in sorted(self.sessions):
            for entry in self.sessions[dev_id]:
                out.append({
                    "dev_id": dev_id,
                    "sess_ctr": entry.params.sess_ctr,
                    "t": entry.params.timestamp_t,
                    "dev_nonce_hex": entry.params.dev_nonce.hex(),
                    "established_at": entry.established_at,
                })
        return out

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n", encoding="utf-8")

    def load(self, path: str | Path) -> None:
        """Restore sessions from a store file, re-deriving secrets.

        Replay high-water marks are not persisted, so reloaded sessions
        start from zero.
        """
        rows = json.loads(Path(path).read_text(encoding="utf-8"))
        self.sessions = {}
        for row in rows:
            identity = self.registry.get(row["dev_id"])
            if identity is None:
                continue
            params = SessionParams(bytes.fromhex(row["dev_nonce_hex"]), int(row["sess_ctr"]), int(row["t"]))
            entries = self.sessions.setdefault(row["dev_id"], [])
            if len(entries) < self.capacity:
                entries.append(EdgeSessionEntry(params, derive_session_secret(identity, params), int(row["established_at"])))


class PskEdge:
    """Baseline decryptor. No session or replay state: duplicates are
    accepted and only flagged for reliability accounting."""

    def __init__(self, keys: dict[str, bytes]) -> None:
        for dev_id, key in keys.items():
            if len(key) != AES_KEY_LEN:
                raise ValueError(f"psk for {dev_id} must be {AES_KEY_LEN} bytes")
        self.keys = dict(keys)
        self.seen: dict[str, set[int]] = {}
        self.outcomes: Counter[str] = Counter()

    def handle_psk_data(self, pkt: PskDataPacket, now_ms: int, payload_size: int | None = None) -> tuple[ServerLogRecord, bool]:
        """Return the log record and whether ``pkt.seq`` was already seen."""
        key = self.keys.get(pkt.dev_id)
        if key is None:
            self.outcomes["data:auth_failure"] += 1
            raise DataRejection("auth_failure")
        try:
            plaintext = aead_open(key, AeadEnvelope(pkt.iv, pkt.ciphertext, pkt.tag), data_aad(pkt.dev_id, pkt.seq))
        except AuthFailure:
            self.outcomes["data:auth_failure"] += 1
            raise DataRejection("auth_failure") from None
        seen = self.seen.setdefault(pkt.dev_id, set())
        duplicate = pkt.seq in seen
        seen.add(pkt.seq)
        self.outcomes["data:duplicate" if duplicate else "data:ok"] += 1
        size = len(encode(pkt)) if payload_size is None else payload_size
        return _server_record(pkt, None, plaintext, now_ms, size), duplicate
