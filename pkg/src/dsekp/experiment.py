"""Wiring of devices, edge, broker and adversary into reproducible runs."""

from __future__ import annotations

import shlex
from collections import Counter, defaultdict
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import adversary
from .crypto import AES_KEY_LEN, DeviceIdentity
from .device import DEFAULT_SESSION_TIMEOUT_MS, AckError, DsekpDevice, Phase, PskDevice, SensorSource
from .edge import DataRejection, EdgeServer, InitRejection, InvariantViolation, PskEdge
from .metrics.logs import ClientLogRecord, ServerLogRecord, annotate_throughput, iso_ms, write_csv
from .metrics.summary import dump_json, summarize
from .transport import (
    DSEKP_PRESET,
    PSK_PRESET,
    Broker,
    NetworkModel,
    VirtualClock,
    write_trace,
)
from .wire import (
    STATUS_OK,
    TOPIC_ACK_PREFIX,
    TOPIC_DSEKP_DATA,
    TOPIC_INIT,
    TOPIC_PSK_DATA,
    DecodeError,
    InitAck,
    decode,
    encode,
    topic_for,
)

DRAIN_MS = 60_000
MODES = ("psk", "dsekp")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunProfile:
    mode: str = "dsekp"
    packets: int = 100
    interval_ms: int = 2000
    devices: int = 1
    seed: int = 0
    latency_base_ms: float | None = None
    latency_jitter_ms: float | None = None
    loss: float = 0.0
    dup: float = 0.0
    reboot_every: int | None = None
    session_timeout_s: int = DEFAULT_SESSION_TIMEOUT_MS // 1000
    out: str | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.packets < 1:
            raise ConfigError("packets must be >= 1")
        if self.interval_ms < 1:
            raise ConfigError("interval_ms must be >= 1")
        if self.devices < 1:
            raise ConfigError("devices must be >= 1")
        if self.reboot_every is not None and self.reboot_every < 1:
            raise ConfigError("reboot_every must be >= 1")
        if self.session_timeout_s < 1:
            raise ConfigError("session_timeout_s must be >= 1")

    def network(self, seed: int) -> NetworkModel:
        preset = PSK_PRESET if self.mode == "psk" else DSEKP_PRESET
        try:
            return NetworkModel(
                base_latency_ms=preset["base_latency_ms"] if self.latency_base_ms is None else self.latency_base_ms,
                jitter_std_ms=preset["jitter_std_ms"] if self.latency_jitter_ms is None else self.latency_jitter_ms,
                loss_prob=self.loss,
                dup_prob=self.dup,
                seed=seed,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_PROFILE_TYPES = {f.name: f.type for f in fields(RunProfile)}


def _coerce(key: str, raw: str):
    if key not in _PROFILE_TYPES:
        raise ConfigError(f"unknown profile key {key!r}")
    kind = _PROFILE_TYPES[key]
    if raw.lower() in ("", "none") and "None" in kind:
        return None
    try:
        if kind.startswith("int"):
            return int(raw)
        if kind.startswith("float"):
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None
    return raw


def load_profile(path: str | Path, **overrides) -> RunProfile:
    """Parse a ``key = value`` profile file; ``#`` starts a comment.
    Keys use the long-flag names with dashes or underscores."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        values[key] = _coerce(key, " ".join(shlex.split(raw)) if raw else raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunProfile(**values)


@dataclass
class SeedPlan:
    """Independent, reproducible random streams for every actor of a run."""

    seed: int

    def __post_init__(self) -> None:
        root = np.random.SeedSequence(self.seed)
        self._provision, self._network, self._devices, self._attack = root.spawn(4)

    def provisioning(self) -> np.random.Generator:
        return np.random.default_rng(self._provision)

    def network_seed(self) -> int:
        return int(self._network.generate_state(1, dtype=np.uint64)[0])

    def device_streams(self, n: int) -> list[tuple[np.random.Generator, np.random.Generator]]:
        return [(np.random.default_rng(a), np.random.default_rng(b)) for a, b in (s.spawn(2) for s in self._devices.spawn(n))]

    def attack_seed(self) -> int:
        return int(self._attack.generate_state(1, dtype=np.uint64)[0])


def _client_record(pkt, sessctr_id, plaintext: bytes, body: bytes) -> ClientLogRecord:
    return ClientLogRecord(
        seq=pkt.seq,
        timestamp=iso_ms(pkt.sendts_ms),
        dev_id=pkt.dev_id,
        sessctr_id=sessctr_id,
        plaintext=plaintext.decode("utf-8"),
        iv=pkt.iv.hex(),
        tag=pkt.tag.hex(),
        ciphertext=pkt.ciphertext.hex(),
        sendts_ms=pkt.sendts_ms,
        payload_size=len(body),
    )


class DsekpClientNode:
    """Runs one device on the broker: periodic readings, handshake, retries."""

    def __init__(self, device: DsekpDevice, sensor: SensorSource, broker: Broker, client_log: list) -> None:
        self.device = device
        self.sensor = sensor
        self.broker = broker
        self.client_log = client_log
        self.pending: list[bytes] = []
        self.sessions_started = 0
        self.ack_errors: Counter[str] = Counter()
        broker.subscribe(TOPIC_ACK_PREFIX + device.dev_id, self.on_ack)

    def _publish_init(self, init, now_ms: int) -> None:
        self.broker.publish(TOPIC_INIT, encode(init), at=now_ms)
        self.broker.call_at(now_ms + self.device.ack_timeout_ms, self._check_ack)

    def _start_session(self, now_ms: int) -> None:
        self.sessions_started += 1
        self._publish_init(self.device.begin_session(now_ms), now_ms)

    def _check_ack(self, now_ms: int) -> None:
        if self.device.phase is not Phase.AWAIT_ACK:
            return
        before = self.device.session
        init = self.device.poll(now_ms)
        if init is not None:
            if self.device.session is not before:
                self.sessions_started += 1
            self._publish_init(init, now_ms)

    def tick(self, now_ms: int, reboot: bool = False) -> None:
        if reboot:
            self.device.simulate_reboot()
        self.pending.append(self.sensor.read())
        if self.device.phase is Phase.IDLE:
            self._start_session(now_ms)
        elif self.device.phase is Phase.ACTIVE:
            before = self.device.session
            init = self.device.poll(now_ms)
            if init is not None and self.device.session is not before:
                self.sessions_started += 1
                self._publish_init(init, now_ms)
            else:
                self.flush(now_ms)

    def flush(self, now_ms: int) -> None:
        while self.pending and self.device.phase is Phase.ACTIVE:
            plaintext = self.pending.pop(0)
            pkt = self.device.next_data_packet(plaintext, now_ms)
            body = encode(pkt)
            self.client_log.append(_client_record(pkt, pkt.sessctr_id, plaintext, body))
            self.broker.publish(TOPIC_DSEKP_DATA, body, at=now_ms)

    def on_ack(self, topic: str, body: bytes, now_ms: int) -> None:
        try:
            ack = decode(topic, body)
            if not isinstance(ack, InitAck):
                raise DecodeError("bad_field", "not an ack")
            self.device.on_ack(ack, now_ms)
        except DecodeError:
            self.ack_errors["decode_error"] += 1
            return
        except AckError as exc:
            self.ack_errors[exc.reason] += 1
            return
        self.flush(now_ms)


class EdgeNode:
    """Broker-facing wrapper of :class:`EdgeServer`, tallying outcomes by origin."""

    def __init__(self, edge: EdgeServer, broker: Broker, server_log: list) -> None:
        self.edge = edge
        self.broker = broker
        self.server_log = server_log
        self.outcomes: dict[str, Counter] = defaultdict(Counter)
        broker.subscribe(TOPIC_INIT, self.on_init)
        broker.subscribe(TOPIC_DSEKP_DATA, self.on_data)

    def _tally(self, key: str) -> None:
        self.outcomes[self.broker.current_origin][key] += 1

    def on_init(self, topic: str, body: bytes, now_ms: int) -> None:
        try:
            msg = decode(topic, body)
        except DecodeError:
            self._tally("init:decode_error")
            return
        try:
            ack = self.edge.handle_init(msg, now_ms)
            self._tally("init:ok")
        except InitRejection as rej:
            ack = rej.ack
            self._tally("init:" + rej.reason)
        self.broker.publish(topic_for(ack), encode(ack), at=now_ms)

    def on_data(self, topic: str, body: bytes, now_ms: int) -> None:
        try:
            pkt = decode(topic, body)
        except DecodeError:
            self._tally("data:decode_error")
            return
        try:
            rec = self.edge.handle_data(pkt, now_ms, payload_size=len(body))
        except DataRejection as rej:
            self._tally("data:" + rej.reason)
            return
        self._tally("data:ok")
        self.server_log.append(rec)


class PskClientNode:
    def __init__(self, device: PskDevice, sensor: SensorSource, broker: Broker, client_log: list) -> None:
        self.device = device
        self.sensor = sensor
        self.broker = broker
        self.client_log = client_log
        self.sessions_started = 0

    def tick(self, now_ms: int, reboot: bool = False) -> None:
        # a static key has nothing to renegotiate; reboots are no-ops
        plaintext = self.sensor.read()
        pkt = self.device.next_psk_packet(plaintext, now_ms)
        body = encode(pkt)
        self.client_log.append(_client_record(pkt, None, plaintext, body))
        self.broker.publish(TOPIC_PSK_DATA, body, at=now_ms)


class PskEdgeNode:
    def __init__(self, edge: PskEdge, broker: Broker, server_log: list) -> None:
        self.edge = edge
        self.broker = broker
        self.server_log = server_log
        self.outcomes: dict[str, Counter] = defaultdict(Counter)
        broker.subscribe(TOPIC_PSK_DATA, self.on_data)

    def on_data(self, topic: str, body: bytes, now_ms: int) -> None:
        origin = self.broker.current_origin
        try:
            pkt = decode(topic, body)
            rec, duplicate = self.edge.handle_psk_data(pkt, now_ms, payload_size=len(body))
        except DecodeError:
            self.outcomes[origin]["data:decode_error"] += 1
            return
        except DataRejection as rej:
            self.outcomes[origin]["data:" + rej.reason] += 1
            return
        self.outcomes[origin]["data:duplicate" if duplicate else "data:ok"] += 1
        self.server_log.append(rec)


@dataclass
class RunResult:
    profile: RunProfile
    broker: Broker
    client_log: list[ClientLogRecord]
    server_log: list[ServerLogRecord]
    clients: list
    edge_node: EdgeNode | PskEdgeNode
    end_ms: int
    attack_report: adversary.AttackReport | None = None

    @property
    def edge(self):
        return self.edge_node.edge

    def init_count(self) -> int:
        return sum(1 for ev in self.broker.trace
                   if ev.event == "publish" and ev.topic == TOPIC_INIT and ev.origin == "honest")

    def ok_ack_count(self) -> int:
        n = 0
        for ev in self.broker.trace:
            if ev.event == "publish" and ev.topic.startswith(TOPIC_ACK_PREFIX):
                try:
                    n += decode(ev.topic, ev.body).status == STATUS_OK
                except DecodeError:
                    continue
        return n

    def honest_outcomes(self) -> Counter:
        return self.edge_node.outcomes["honest"]

    def summary(self) -> dict:
        out = {
            "profile": {f.name: getattr(self.profile, f.name) for f in fields(RunProfile) if f.name != "out"},
            "network": {
                "base_latency_ms": self.broker.network.base_latency_ms,
                "jitter_std_ms": self.broker.network.jitter_std_ms,
                "loss_prob": self.broker.network.loss_prob,
                "dup_prob": self.broker.network.dup_prob,
            },
            "sent": len(self.client_log),
            "received": len(self.server_log),
            "edge_outcomes": {origin: dict(sorted(c.items())) for origin, c in sorted(self.edge_node.outcomes.items())},
        }
        if self.profile.mode == "dsekp":
            out["sessions_started"] = sum(c.sessions_started for c in self.clients)
            out["init_messages"] = self.init_count()
            out["ok_acks"] = self.ok_ack_count()
            out["live_sessions"] = {d: self.edge.session_count(d) for d in sorted(self.edge.sessions)}
        if len(self.server_log) >= 2:
            out["metrics"] = summarize(self.profile.mode, self.server_log, self.client_log,
                                       self.profile.interval_ms).as_dict()
        if self.attack_report is not None:
            out["attack"] = self.attack_report.as_dict()
        return out


def provision(profile: RunProfile, plan: SeedPlan) -> tuple[list[DeviceIdentity], dict[str, bytes]]:
    rng = plan.provisioning()
    edge_salt = rng.bytes(32)
    identities, psks = [], {}
    for i in range(profile.devices):
        dev_id = f"esp32-{i + 1:02d}"
        identities.append(DeviceIdentity(dev_id, rng.bytes(32), edge_salt))
        psks[dev_id] = rng.bytes(AES_KEY_LEN)
    return identities, psks


def build(profile: RunProfile, clock_start_ms: int | None = None) -> RunResult:
    """Wire every actor of a run without advancing time."""
    plan = SeedPlan(profile.seed)
    clock = VirtualClock() if clock_start_ms is None else VirtualClock(clock_start_ms)
    broker = Broker(profile.network(plan.network_seed()), clock)
    identities, psks = provision(profile, plan)
    streams = plan.device_streams(profile.devices)
    client_log: list[ClientLogRecord] = []
    server_log: list[ServerLogRecord] = []
    clients: list = []
    if profile.mode == "dsekp":
        edge_node = EdgeNode(EdgeServer(identities), broker, server_log)
        for ident, (dev_rng, sensor_rng) in zip(identities, streams):
            device = DsekpDevice(ident, dev_rng, session_timeout_ms=profile.session_timeout_s * 1000)
            clients.append(DsekpClientNode(device, SensorSource(sensor_rng), broker, client_log))
    else:
        edge_node = PskEdgeNode(PskEdge(psks), broker, server_log)
        for ident, (dev_rng, sensor_rng) in zip(identities, streams):
            device = PskDevice(ident.dev_id, psks[ident.dev_id], dev_rng)
            clients.append(PskClientNode(device, SensorSource(sensor_rng), broker, client_log))

    start = clock.now_ms
    k = profile.reboot_every
    for d, client in enumerate(clients):
        offset = d * profile.interval_ms // profile.devices
        for i in range(profile.packets):
            reboot = k is not None and i > 0 and i % k == 0
            broker.call_at(start + offset + i * profile.interval_ms,
                           lambda now, c=client, r=reboot: c.tick(now, r))
    end = start + profile.packets * profile.interval_ms + DRAIN_MS
    return RunResult(profile, broker, client_log, server_log, clients, edge_node, end)


def check_invariants(result: RunResult) -> None:
    """Raise :class:`InvariantViolation` on any protocol-level breach."""
    seen_iv: set[tuple] = set()
    for rec in result.client_log:
        key = (rec.dev_id, rec.sessctr_id, rec.iv)
        if key in seen_iv:
            raise InvariantViolation(f"iv reused: {key}")
        seen_iv.add(key)
    if result.profile.mode == "dsekp":
        last: dict[tuple, int] = {}
        for rec in result.server_log:
            key = (rec.dev_id, rec.sessctr_id)
            if rec.seq <= last.get(key, 0):
                raise InvariantViolation(f"non-increasing accepted seq {rec.seq} for {key}")
            last[key] = rec.seq
        for dev_id in result.edge.sessions:
            result.edge.check_invariants(dev_id)
        per_session: dict[tuple, list[int]] = defaultdict(list)
        for rec in result.client_log:
            per_session[(rec.dev_id, rec.sessctr_id)].append(rec.seq)
        for key, seqs in per_session.items():
            # a counter may recur across sessions; each session restarts at 1
            runs = [[]]
            for s in seqs:
                if s == 1 and runs[-1]:
                    runs.append([])
                runs[-1].append(s)
            for r in runs:
                if r != list(range(1, len(r) + 1)):
                    raise InvariantViolation(f"emitted seqs for {key} are not gapless from 1")


def run(profile: RunProfile) -> RunResult:
    result = build(profile)
    result.broker.run_until(result.end_ms)
    check_invariants(result)
    return result


def run_attack(profile: RunProfile, scenario: adversary.AttackScenario, concurrent: bool = False) -> RunResult:
    """Honest traffic plus an attack.

    By default the attacker replays/forges after the honest run has
    finished, drawing from a full capture. With ``concurrent`` the
    injections are spread over the second half of the honest run.
    """
    result = build(profile)
    tap = adversary.LiveTap(result.broker)
    attacker = adversary.Attacker(scenario)
    start = result.broker.clock.now_ms
    if concurrent:
        half = start + profile.packets * profile.interval_ms // 2
        span = max(1, profile.packets * profile.interval_ms // 2)
        times = [half + (i * span) // scenario.count for i in range(scenario.count)]
        attacker.schedule(tap.archive, result.broker, times)
        result.broker.run_until(result.end_ms)
    else:
        result.broker.run_until(result.end_ms)
        if not tap.archive:
            raise adversary.EmptyArchive(scenario.kind)
        attacker.schedule(tap.archive, result.broker, [result.broker.clock.now_ms] * scenario.count)
        result.broker.run_until_idle(horizon_ms=result.broker.clock.now_ms + DRAIN_MS)
    result.attack_report = adversary.report(scenario.kind, scenario.count, result.edge_node.outcomes[adversary.ORIGIN])
    check_invariants(result)
    return result


def write_artifacts(result: RunResult, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mode = result.profile.mode
    write_csv(result.client_log, out / "client_logs.csv", variant=mode, side="client")
    write_csv(annotate_throughput(result.server_log), out / "server_logs.csv", variant=mode, side="server")
    dump_json(result.summary(), out / "summary.json")
    write_trace(result.broker.trace, out / "trace.jsonl")
    sessions = result.edge.to_json() if mode == "dsekp" else []
    dump_json(sessions, out / "sessions.json")
    if result.attack_report is not None:
        dump_json(result.attack_report.as_dict(), out / "attack_report.json")
    return out
