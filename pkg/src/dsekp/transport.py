"""Deterministic in-process pub/sub broker driven by a virtual clock.

Every message copy is scheduled on a single event heap keyed by
``(time_ms, insertion_index)``, so equal-time events keep FIFO order and a
given seed always yields the same trace.
"""

from __future__ import annotations

import heapq
import itertools
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

import numpy as np

Handler = Callable[[str, bytes, int], None]

# Fixed virtual epoch (2023-11-14T22:13:20Z) so timestamps look like real ones.
DEFAULT_EPOCH_MS = 1_700_000_000_000


class DuplicateSubscription(ValueError):
    pass


@dataclass(frozen=True)
class NetworkModel:
    base_latency_ms: float = 0.0
    jitter_std_ms: float = 0.0
    loss_prob: float = 0.0
    dup_prob: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.base_latency_ms < 0 or self.jitter_std_ms < 0:
            raise ValueError("latency parameters must be non-negative")
        for name in ("loss_prob", "dup_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


# Scenario presets matching the latency moments reported for each protocol.
PSK_PRESET = dict(base_latency_ms=283.0, jitter_std_ms=183.0)
DSEKP_PRESET = dict(base_latency_ms=360.0, jitter_std_ms=130.0)


class VirtualClock:
    def __init__(self, start_ms: int = DEFAULT_EPOCH_MS) -> None:
        self._now = int(start_ms)

    @property
    def now_ms(self) -> int:
        return self._now

    def advance_to(self, t_ms: int) -> None:
        if t_ms < self._now:
            raise ValueError("virtual clock cannot go backwards")
        self._now = int(t_ms)


@dataclass(frozen=True)
class TraceEvent:
    t_ms: int
    event: str  # publish | drop | deliver
    topic: str = ""
    body: bytes = b""
    copy: int = 0
    origin: str = "honest"

    def to_json(self) -> str:
        rec = {
            "t": self.t_ms,
            "ev": self.event,
            "topic": self.topic,
            "body": self.body.decode("utf-8", "replace"),
            "copy": self.copy,
            "src": self.origin,
        }
        return json.dumps(rec, separators=(",", ":"), ensure_ascii=False)


class Transport(Protocol):
    """What devices, edge and adversary need from a broker. A real MQTT
    client adapter would implement the same three methods."""

    def publish(self, topic: str, body: bytes, at: int | None = None, impaired: bool = True,
                origin: str = "honest") -> None: ...

    def subscribe(self, pattern: str, handler: Handler) -> "Subscription": ...

    def call_at(self, t_ms: int, fn: Callable[[int], None]) -> None: ...


@dataclass(frozen=True)
class Subscription:
    pattern: str
    handler: Handler


def topic_matches(pattern: str, topic: str) -> bool:
    """MQTT-style match with ``+`` (one segment) and trailing ``#``."""
    p_parts = pattern.split("/")
    t_parts = topic.split("/")
    for i, p in enumerate(p_parts):
        if p == "#":
            return i == len(p_parts) - 1
        if i >= len(t_parts):
            return False
        if p != "+" and p != t_parts[i]:
            return False
    return len(p_parts) == len(t_parts)


@dataclass
class TopicTally:
    publishes: int = 0
    duplicates: int = 0
    drops: int = 0
    deliveries: int = 0


class Broker:
    def __init__(self, network: NetworkModel | None = None, clock: VirtualClock | None = None) -> None:
        self.network = network or NetworkModel()
        self.clock = clock or VirtualClock()
        self._rng = np.random.default_rng(self.network.seed)
        self._queue: list[tuple[int, int, Callable[[], None]]] = []
        self._counter = itertools.count()
        self._subs: list[Subscription] = []
        self.trace: list[TraceEvent] = []
        self.tally: dict[str, TopicTally] = {}
        self._taps: list[Handler] = []
        # origin tag of the copy being delivered, readable from handlers
        self.current_origin = "honest"

    # -- wiring -------------------------------------------------------
    def subscribe(self, pattern: str, handler: Handler) -> Subscription:
        for sub in self._subs:
            if sub.pattern == pattern and sub.handler == handler:
                raise DuplicateSubscription(pattern)
        sub = Subscription(pattern, handler)
        self._subs.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        self._subs.remove(sub)

    def add_tap(self, handler: Handler) -> None:
        """Passive observer of every delivered copy (used by the adversary)."""
        self._taps.append(handler)

    # -- scheduling ---------------------------------------------------
    def _schedule(self, t_ms: int, fn: Callable[[], None]) -> None:
        heapq.heappush(self._queue, (int(t_ms), next(self._counter), fn))

    def call_at(self, t_ms: int, fn: Callable[[int], None]) -> None:
        self._schedule(t_ms, lambda: fn(self.clock.now_ms))

    def sample_latency(self) -> int:
        net = self.network
        if net.jitter_std_ms == 0:
            return int(round(net.base_latency_ms))
        return max(0, int(round(net.base_latency_ms + self._rng.normal(0.0, net.jitter_std_ms))))

    def publish(self, topic: str, body: bytes, at: int | None = None, impaired: bool = True,
                origin: str = "honest") -> None:
        """Schedule delivery of ``body``. ``impaired=False`` bypasses the
        network model (zero latency, no loss, no duplication); ``origin``
        labels the copies in the trace and while they are delivered."""
        if not topic:
            raise ValueError("topic must be non-empty")
        at = self.clock.now_ms if at is None else int(at)
        if at < self.clock.now_ms:
            raise ValueError("cannot publish in the past")
        tally = self.tally.setdefault(topic, TopicTally())
        tally.publishes += 1
        self.trace.append(TraceEvent(at, "publish", topic, body, 0, origin))
        if not impaired:
            self._schedule_copy(at, topic, body, 0, origin)
            return
        net = self.network
        if net.loss_prob > 0 and self._rng.random() < net.loss_prob:
            tally.drops += 1
            self.trace.append(TraceEvent(at, "drop", topic, body, 0, origin))
            return
        copies = 1
        if net.dup_prob > 0 and self._rng.random() < net.dup_prob:
            copies = 2
            tally.duplicates += 1
        for copy in range(copies):
            self._schedule_copy(at + self.sample_latency(), topic, body, copy, origin)

    def _schedule_copy(self, t_ms: int, topic: str, body: bytes, copy: int, origin: str) -> None:
        self._schedule(t_ms, lambda: self._deliver(topic, body, copy, origin))

    def _deliver(self, topic: str, body: bytes, copy: int, origin: str) -> None:
        now = self.clock.now_ms
        self.tally[topic].deliveries += 1
        self.trace.append(TraceEvent(now, "deliver", topic, body, copy, origin))
        self.current_origin = origin
        try:
            for tap in self._taps:
                tap(topic, body, now)
            for sub in list(self._subs):
                if topic_matches(sub.pattern, topic):
                    sub.handler(topic, body, now)
        finally:
            self.current_origin = "honest"

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, t_end: int) -> list[TraceEvent]:
        """Process events with time <= ``t_end``; return the trace slice produced."""
        if t_end < self.clock.now_ms:
            raise ValueError("t_end lies in the past")
        start = len(self.trace)
        while self._queue and self._queue[0][0] <= t_end:
            t, _, fn = heapq.heappop(self._queue)
            self.clock.advance_to(t)
            fn()
        self.clock.advance_to(t_end)
        return self.trace[start:]

    def run_until_idle(self, horizon_ms: int | None = None) -> list[TraceEvent]:
        start = len(self.trace)
        while self._queue:
            t = self._queue[0][0]
            if horizon_ms is not None and t > horizon_ms:
                break
            self.run_until(t)
        return self.trace[start:]


def write_trace(events: Iterable[TraceEvent], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ev in events:
            fh.write(ev.to_json() + "\n")
