"""Deterministic traffic generation for the benign (A), enforcement (B) and
anomaly (C) scenarios, with per-frame ground-truth labels.

Labels come from a small model of the policy the generator itself drives
(per-source publish counts, keep-alive baselines, crafted lengths, topic
authorization). The model tracks clients by source address, never by slot,
which is why specs whose clients share a slot are rejected.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence, Union

from .. import frames as fb
from ..meter import MeterConfig
from ..parser import RawFrame
from ..pipeline import ACL_DROP, Reason
from ..state import COUNTER_MAX, NUM_SLOTS
from ..tables import GlobalLimits

AUTHORIZED_HIERARCHIES = {
    "environment/": ("temp", "humidity", "co2", "pressure"),
    "device/sensor/": ("t1", "t2", "h1", "p1"),
    "ops/line1/": ("status", "alarm", "count"),
    "system/gw/": ("uptime", "load", "mem"),
    "telemetry/": ("batt", "rssi", "fw"),
}
UNAUTHORIZED_HIERARCHIES = {
    "attacker/": ("x", "cmd", "exfil"),
}


def topics_for(hierarchies: dict[str, Sequence[str]]) -> tuple[str, ...]:
    return tuple(prefix + leaf for prefix, leaves in hierarchies.items() for leaf in leaves)


AUTHORIZED_TOPICS = topics_for(AUTHORIZED_HIERARCHIES)
UNAUTHORIZED_TOPICS = topics_for(UNAUTHORIZED_HIERARCHIES)


def default_rules_text(subnet: str = "10.0.0.0/8") -> str:
    lines = [f'mqtt 10 permit src={subnet} type=publish qos=0,1,2 topic_prefix="{p}"'
             for p in AUTHORIZED_HIERARCHIES]
    lines += [f'mqtt 20 deny src=0.0.0.0/0 type=publish qos=0,1,2 topic_prefix="{p}"'
              for p in UNAUTHORIZED_HIERARCHIES]
    return "\n".join(lines) + "\n"


class SpecError(ValueError):
    """Scenario spec that cannot be generated."""


@dataclass(frozen=True)
class Label:
    kind: str = "benign"  # benign | expect_drop | expect_clone
    drop_reason: Union[int, str, None] = None
    clone_reasons: frozenset = frozenset()

    def __str__(self) -> str:
        if self.kind == "expect_drop":
            return f"expect_drop({self.drop_reason})"
        if self.kind == "expect_clone":
            return "expect_clone(" + ",".join(str(int(r)) for r in sorted(self.clone_reasons)) + ")"
        return "benign"


BENIGN = Label()


@dataclass(frozen=True)
class LabeledFrame:
    frame: RawFrame
    label: Label
    phase: str = ""


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "A"
    rate_pps: int = 5000
    duration_s: float = 60.0
    qos_mix: tuple[float, float, float] = (1 / 3, 1 / 3, 1 / 3)
    topic_pool: tuple[str, ...] = AUTHORIZED_TOPICS
    unauthorized_pool: tuple[str, ...] = ()
    unauthorized_fraction: float = 0.0
    payload_bytes: int = 64
    clients: tuple[str, ...] = ("10.0.0.4", "10.0.0.5")
    keepalive_s: int = 60
    seed: int = 0
    limits: GlobalLimits = field(default_factory=GlobalLimits)
    meter: MeterConfig = field(default_factory=MeterConfig)
    # Scenario B
    publish_count: int = 16_000
    # Scenario C
    benign_packets: int = 6_000
    benign_rate_pps: int = 1_000
    burst_clients: tuple[str, ...] = ("10.0.0.6", "10.0.0.7", "10.0.0.8", "10.0.0.9")
    burst_keepalive_s: int = 2
    rl_packets: int = 100
    rl_client: str = "10.0.0.10"
    start_ns: int = 1_700_000_000 * 1_000_000_000

    def validate(self) -> None:
        if self.scenario not in ("A", "B", "C", "Custom"):
            raise SpecError(f"unknown scenario {self.scenario!r}")
        if self.rate_pps <= 0:
            raise SpecError("rate_pps must be positive")
        if self.duration_s <= 0:
            raise SpecError("duration_s must be positive")
        if not self.clients:
            raise SpecError("at least one client is required")
        if not self.topic_pool:
            raise SpecError("topic_pool is empty")
        if len(self.qos_mix) != 3 or min(self.qos_mix) < 0 or sum(self.qos_mix) <= 0:
            raise SpecError("qos_mix must be three non-negative weights")
        if self.unauthorized_fraction and not self.unauthorized_pool:
            raise SpecError("unauthorized_fraction set without an unauthorized_pool")
        addrs = list(self.clients)
        if self.scenario == "C":
            addrs = [self.clients[0], *self.burst_clients, self.rl_client]
            if self.benign_packets < 2 or self.benign_rate_pps <= 0:
                raise SpecError("benign phase needs >= 2 packets and a positive rate")
        slots = [fb.ip_to_int(a) % NUM_SLOTS for a in addrs]
        if len(set(slots)) != len(slots):
            raise SpecError("clients collide on a register slot; ground truth would be ambiguous")


def scenario_a(rate_pps: int = 5000, duration_s: float = 60.0, seed: int = 0, **kw) -> ScenarioSpec:
    # benign baseline: the soft cap is not under test here
    kw.setdefault("limits", GlobalLimits(pub_soft_limit=COUNTER_MAX))
    return ScenarioSpec("A", rate_pps, duration_s, seed=seed, **kw)


def scenario_b(rate_pps: int = 10_000, seed: int = 0, **kw) -> ScenarioSpec:
    kw.setdefault("limits", GlobalLimits(pub_soft_limit=15_000))
    kw.setdefault("clients", ("10.0.0.4",))
    count = kw.get("publish_count", 16_000)
    return ScenarioSpec("B", rate_pps, duration_s=(count + 1) / rate_pps, seed=seed, **kw)


def scenario_c(rate_pps: int = 10_000, duration_s: float = 5.0, seed: int = 0, **kw) -> ScenarioSpec:
    kw.setdefault("limits", GlobalLimits(ka_multiplier_gamma=1.5, rl_threshold_bytes=131_072))
    kw.setdefault("clients", ("10.0.0.4",))
    return ScenarioSpec("C", rate_pps, duration_s, seed=seed, **kw)


def make_spec(scenario: str, rate_pps: Optional[int] = None, duration_s: Optional[float] = None,
              seed: int = 0, **kw) -> ScenarioSpec:
    scenario = scenario.upper()
    if scenario == "A":
        return scenario_a(rate_pps or 5000, duration_s or 60.0, seed, **kw)
    if scenario == "B":
        return scenario_b(rate_pps or 10_000, seed, **kw)
    if scenario == "C":
        return scenario_c(rate_pps or 10_000, duration_s or 5.0, seed, **kw)
    raise SpecError(f"unknown scenario {scenario!r}")


class _Client:
    __slots__ = ("addr", "sport", "seq", "ident", "connected", "keepalive_s", "last_ka_ns", "publishes",
                 "packet_id")

    def __init__(self, addr: str, n: int) -> None:
        self.addr = fb.ip_to_int(addr)
        self.sport = 40000 + n
        self.seq = 1
        self.ident = n * 1000
        self.connected = False
        self.keepalive_s = 0
        self.last_ka_ns = 0
        self.publishes = 0
        self.packet_id = 0


class _Builder:
    """Emits frames for clients and labels them against the policy model."""

    def __init__(self, spec: ScenarioSpec) -> None:
        self.spec = spec
        self.limits = spec.limits
        self.rng = random.Random(spec.seed)
        self.clients: dict[str, _Client] = {}
        self.authorized = set(spec.topic_pool)

    def client(self, addr: str) -> _Client:
        c = self.clients.get(addr)
        if c is None:
            c = self.clients[addr] = _Client(addr, len(self.clients))
        return c

    def _emit(self, c: _Client, mqtt: bytes, ts: int, label: Label, phase: str) -> LabeledFrame:
        data = fb.mqtt_frame(c.addr, mqtt, sport=c.sport, seq=c.seq, ident=c.ident)
        c.seq = (c.seq + len(mqtt)) & 0xFFFFFFFF
        c.ident = (c.ident + 1) & 0xFFFF
        return LabeledFrame(RawFrame(data, ts), label, phase)

    def connect(self, c: _Client, ts: int, keepalive_s: int, phase: str) -> LabeledFrame:
        c.connected = True
        c.keepalive_s = keepalive_s
        c.last_ka_ns = ts
        return self._emit(c, fb.mqtt_connect(f"cli-{c.sport}", keepalive_s), ts, BENIGN, phase)

    def pingreq(self, c: _Client, ts: int, phase: str) -> LabeledFrame:
        if c.connected:
            c.last_ka_ns = ts
        return self._emit(c, fb.mqtt_pingreq(), ts, BENIGN, phase)

    def publish(self, c: _Client, ts: int, phase: str, topic: Optional[str] = None,
                remaining_length: Optional[int] = None) -> LabeledFrame:
        rng = self.rng
        if topic is None:
            spec = self.spec
            if spec.unauthorized_fraction and rng.random() < spec.unauthorized_fraction:
                topic = rng.choice(spec.unauthorized_pool)
            else:
                topic = rng.choice(spec.topic_pool)
        qos = rng.choices((0, 1, 2), weights=self.spec.qos_mix)[0]
        payload = rng.randbytes(self.spec.payload_bytes)
        c.packet_id = c.packet_id % 0xFFFF + 1
        mqtt = fb.mqtt_publish(topic, payload, qos, c.packet_id, remaining_length=remaining_length)
        rl = remaining_length
        if rl is None:
            rl = 2 + len(topic.encode()) + (2 if qos else 0) + len(payload)
        label = self._label_publish(c, ts, topic, rl)
        return self._emit(c, mqtt, ts, label, phase)

    def _label_publish(self, c: _Client, ts: int, topic: str, rl: int) -> Label:
        limits = self.limits
        c.publishes += 1
        if not c.connected:
            return Label("expect_drop", Reason.NO_SESSION)
        if c.publishes > limits.pub_soft_limit:
            return Label("expect_drop", Reason.SOFT_LIMIT)
        clones = set()
        if c.keepalive_s and (ts - c.last_ka_ns) > limits.ka_multiplier_gamma * c.keepalive_s * 1e9:
            clones.add(Reason.KEEPALIVE)
        rl_bytes = len(fb.encode_remaining_length(rl))
        if rl >= limits.rl_threshold_bytes and (rl_bytes >= 3 or not limits.rl_require_3byte_encoding):
            clones.add(Reason.REMAINING_LENGTH)
        if topic not in self.authorized:
            return Label("expect_drop", ACL_DROP, frozenset(clones))
        if clones:
            return Label("expect_clone", None, frozenset(clones))
        return BENIGN


def _ts(start_ns: int, i: int, rate_pps: int) -> int:
    return start_ns + (i * 1_000_000_000) // rate_pps


def _scenario_a(spec: ScenarioSpec, b: _Builder) -> Iterator[LabeledFrame]:
    total = int(round(spec.rate_pps * spec.duration_s))
    clients = [b.client(a) for a in spec.clients]
    ping_every_ns = max(1, spec.keepalive_s) * 1_000_000_000 // 2
    next_ping = {c.addr: spec.start_ns + ping_every_ns for c in clients}
    turn = 0
    for i in range(total):
        ts = _ts(spec.start_ns, i, spec.rate_pps)
        if i < len(clients):
            yield b.connect(clients[i], ts, spec.keepalive_s, "benign")
            continue
        c = clients[turn % len(clients)]
        turn += 1
        if spec.keepalive_s and ts >= next_ping[c.addr]:
            next_ping[c.addr] = ts + ping_every_ns
            yield b.pingreq(c, ts, "benign")
        else:
            yield b.publish(c, ts, "benign")


def _scenario_b(spec: ScenarioSpec, b: _Builder) -> Iterator[LabeledFrame]:
    i = 0
    for addr in spec.clients:
        c = b.client(addr)
        yield b.connect(c, _ts(spec.start_ns, i, spec.rate_pps), spec.keepalive_s, "enforcement")
        i += 1
        for _ in range(spec.publish_count):
            yield b.publish(c, _ts(spec.start_ns, i, spec.rate_pps), "enforcement")
            i += 1


def _scenario_c(spec: ScenarioSpec, b: _Builder) -> Iterator[LabeledFrame]:
    # 1. benign specificity set: KeepAlive-compliant client, some sizable but
    #    below-threshold publishes.
    c = b.client(spec.clients[0])
    rate = spec.benign_rate_pps
    ping_every = max(1, rate * spec.burst_keepalive_s // 2)
    t = spec.start_ns
    for i in range(spec.benign_packets):
        ts = _ts(t, i, rate)
        if i == 0:
            yield b.connect(c, ts, spec.burst_keepalive_s, "benign")
        elif i % ping_every == 0:
            yield b.pingreq(c, ts, "benign")
        elif i % 50 == 25:
            big = b.rng.randrange(16_384, spec.limits.rl_threshold_bytes)
            yield b.publish(c, ts, "benign", remaining_length=big)
        else:
            yield b.publish(c, ts, "benign")
    t = _ts(t, spec.benign_packets, rate) + 1_000_000_000

    # 2. KeepAlive stall: sessions with a short KeepAlive, then a sustained
    #    publish burst with no PINGREQ.
    burst = [b.client(a) for a in spec.burst_clients]
    for k, bc in enumerate(burst):
        yield b.connect(bc, t + k, spec.burst_keepalive_s, "keepalive")
    n_burst = int(round(spec.rate_pps * spec.duration_s))
    for i in range(n_burst):
        yield b.publish(burst[i % len(burst)], _ts(t, i + 1, spec.rate_pps), "keepalive")
    t = _ts(t, n_burst + 1, spec.rate_pps) + 1_000_000_000

    # 3. Remaining-Length: crafted headers claiming >= threshold bytes.
    rc = b.client(spec.rl_client)
    yield b.connect(rc, t, 0, "remaining_length")
    for i in range(spec.rl_packets):
        rl = b.rng.randrange(spec.limits.rl_threshold_bytes, 268_435_456)
        yield b.publish(rc, _ts(t, i + 1, 1000), "remaining_length", remaining_length=rl)


def generate(spec: ScenarioSpec) -> list[LabeledFrame]:
    """Deterministic, timestamp-ordered frames for ``spec`` with labels."""
    spec.validate()
    builder = _Builder(spec)
    if spec.scenario == "A" or spec.scenario == "Custom":
        frames = list(_scenario_a(spec, builder))
    elif spec.scenario == "B":
        frames = list(_scenario_b(spec, builder))
    else:
        frames = list(_scenario_c(spec, builder))
    return frames
