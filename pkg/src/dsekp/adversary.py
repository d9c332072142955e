"""Scripted on-path attacker.

The attacker sits on the broker: it can read every delivered message,
replay it, modify it or inject new messages, but it never learns
``dev_secret`` or ``edge_salt``.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .crypto import NONCE_LEN, PROOF_LEN
from .transport import Broker, TraceEvent
from .wire import (
    TOPIC_DSEKP_DATA,
    TOPIC_INIT,
    TOPIC_PSK_DATA,
    DecodeError,
    DsekpDataPacket,
    InitMessage,
    PskDataPacket,
    decode,
    encode,
)

ORIGIN = "adversary"
KINDS = ("replay_data", "replay_init", "tamper_bitflip", "forge_init", "cross_session_splice")
_DATA_TOPICS = (TOPIC_DSEKP_DATA, TOPIC_PSK_DATA)
DRAIN_MS = 60_000


class EmptyArchive(ValueError):
    pass


@dataclass(frozen=True)
class CapturedMessage:
    t_ms: int
    topic: str
    body: bytes


@dataclass(frozen=True)
class AttackScenario:
    kind: str
    count: int
    seed: int = 0

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.count < 1:
            raise ValueError("count must be >= 1")


@dataclass
class AttackReport:
    kind: str
    injected: int
    accepted: int
    rejected_by_reason: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "injected": self.injected,
            "accepted": self.accepted,
            "rejected_by_reason": dict(sorted(self.rejected_by_reason.items())),
        }

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True)


def capture(trace: Iterable[TraceEvent]) -> list[CapturedMessage]:
    """Every delivered copy of honest traffic, bodies byte-exact."""
    return [CapturedMessage(ev.t_ms, ev.topic, ev.body) for ev in trace
            if ev.event == "deliver" and ev.origin != ORIGIN]


class LiveTap:
    """Passive capture attached to a running broker."""

    def __init__(self, broker: Broker) -> None:
        self.archive: list[CapturedMessage] = []
        self._broker = broker
        broker.add_tap(self._on_message)

    def _on_message(self, topic: str, body: bytes, now_ms: int) -> None:
        if self._broker.current_origin != ORIGIN:
            self.archive.append(CapturedMessage(now_ms, topic, body))


def _flip_bit(raw: bytes, bit: int) -> bytes:
    buf = bytearray(raw)
    buf[bit // 8] ^= 1 << (bit % 8)
    return bytes(buf)


class Attacker:
    def __init__(self, scenario: AttackScenario) -> None:
        self.scenario = scenario
        self.rng = np.random.default_rng(scenario.seed)
        # incremental view of the archive, which only ever grows
        self._synced = 0
        self._data_raw: list[CapturedMessage] = []
        self._init_raw: list[CapturedMessage] = []
        self._data_pkts: list = []
        self._dev_ids: set[str] = set()

    def _sync(self, archive: Sequence[CapturedMessage]) -> None:
        for msg in archive[self._synced:]:
            if msg.topic in _DATA_TOPICS:
                self._data_raw.append(msg)
            elif msg.topic == TOPIC_INIT:
                self._init_raw.append(msg)
            else:
                continue
            try:
                decoded = decode(msg.topic, msg.body)
            except DecodeError:
                continue
            self._dev_ids.add(decoded.dev_id)
            if msg.topic in _DATA_TOPICS:
                self._data_pkts.append(decoded)
        self._synced = len(archive)

    def _pick(self, items: Sequence):
        if not items:
            raise EmptyArchive(f"{self.scenario.kind}: nothing suitable captured")
        return items[int(self.rng.integers(len(items)))]

    def craft(self, archive: Sequence[CapturedMessage], now_ms: int) -> tuple[str, bytes]:
        """Build one adversarial (topic, body) from what has been captured."""
        self._sync(archive)
        kind = self.scenario.kind
        if kind == "replay_data":
            msg = self._pick(self._data_raw)
            return msg.topic, msg.body
        if kind == "replay_init":
            msg = self._pick(self._init_raw)
            return msg.topic, msg.body
        if kind == "tamper_bitflip":
            return self._tamper(self._pick(self._data_pkts))
        if kind == "forge_init":
            forged = InitMessage(
                dev_id=self._pick(sorted(self._dev_ids)),
                sess_ctr=int(self.rng.integers(0, 1 << 16)),
                timestamp_t=(now_ms // 1000) & 0xFFFFFFFF,
                dev_nonce=self.rng.bytes(NONCE_LEN),
                init_proof=self.rng.bytes(PROOF_LEN),
            )
            return TOPIC_INIT, encode(forged)
        return self._splice()

    def _tamper(self, pkt: DsekpDataPacket | PskDataPacket) -> tuple[str, bytes]:
        targets = ["ciphertext", "iv", "tag", "seq"]
        if isinstance(pkt, DsekpDataPacket):
            targets.append("sessctr_id")
        name = targets[int(self.rng.integers(len(targets)))]
        value = getattr(pkt, name)
        if isinstance(value, bytes):
            value = _flip_bit(value, int(self.rng.integers(8 * len(value))))
        else:
            width = 16 if name == "sessctr_id" else 64
            value ^= 1 << int(self.rng.integers(width))
        out = replace(pkt, **{name: value})
        return (TOPIC_DSEKP_DATA if isinstance(out, DsekpDataPacket) else TOPIC_PSK_DATA), encode(out)

    def _splice(self) -> tuple[str, bytes]:
        """Old ciphertext under another session's counter header."""
        packets = [p for p in self._data_pkts if isinstance(p, DsekpDataPacket)]
        pkt = self._pick(packets)
        # the device's five most recently observed counters are the ones an
        # edge still holds; target those so the splice meets a live key
        recent: list[int] = []
        for p in reversed(packets):
            if p.dev_id == pkt.dev_id and p.sessctr_id not in recent:
                recent.append(p.sessctr_id)
                if len(recent) == 5:
                    break
        seen = [c for c in recent if c != pkt.sessctr_id]
        if seen:
            ctr = seen[int(self.rng.integers(len(seen)))]
        else:
            ctr = (pkt.sessctr_id + 1 + int(self.rng.integers((1 << 16) - 1))) % (1 << 16)
        return TOPIC_DSEKP_DATA, encode(replace(pkt, sessctr_id=ctr))

    def schedule(self, archive: Sequence[CapturedMessage], broker: Broker, times: Sequence[int]) -> None:
        """Inject one crafted message at each time, drawing from ``archive``
        as it stands at that moment (the list may keep growing)."""
        def fire(now_ms: int) -> None:
            topic, body = self.craft(archive, now_ms)
            broker.publish(topic, body, impaired=False, origin=ORIGIN)

        for t in times:
            broker.call_at(t, fire)


def report(kind: str, injected: int, outcomes: Counter) -> AttackReport:
    """Turn edge outcomes for adversarial deliveries into a report. Both
    ``ok`` and baseline ``duplicate`` count as accepted."""
    accepted = 0
    rejected: dict[str, int] = {}
    for key, n in outcomes.items():
        reason = key.split(":", 1)[-1]
        if reason in ("ok", "duplicate"):
            accepted += n
        else:
            rejected[reason] = rejected.get(reason, 0) + n
    return AttackReport(kind, injected, accepted, rejected)


def execute(scenario: AttackScenario, archive: Sequence[CapturedMessage], broker: Broker, outcomes: Counter,
            spacing_ms: int = 0) -> AttackReport:
    """Inject ``scenario.count`` messages now and drain the broker.

    ``outcomes`` is the edge-side tally of adversarial deliveries; the
    report counts only what changed during this call.
    """
    if not archive:
        # forge_init also needs traffic, to learn which device ids exist
        raise EmptyArchive(scenario.kind)
    before = Counter(outcomes)
    start = broker.clock.now_ms
    Attacker(scenario).schedule(archive, broker, [start + i * spacing_ms for i in range(scenario.count)])
    broker.run_until_idle(horizon_ms=start + scenario.count * spacing_ms + DRAIN_MS)
    delta = Counter(outcomes)
    delta.subtract(before)
    return report(scenario.kind, scenario.count, +delta)
