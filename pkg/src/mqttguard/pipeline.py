"""Single-pass ingress pipeline: parse, classify, enforce, screen, meter, authorize."""

from __future__ import annotations

import threading
from collections import Counter, deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Iterable, Optional

from .meter import RED, MeterConfig
from .parser import (
    CONNECT, DISCONNECT, PINGREQ, PUBLISH, TOPIC_PREFIX_LEN, ParsedPacket, RawFrame, parse_frame,
)
from .state import NUM_SLOTS, StateStore, TypeClass, type_class
from .tables import DENY, GLOBAL_LIMITS, IPV4_ACL, MQTT_ACL, PolicyTables

CLONE_QUEUE_CAPACITY = 4096
_NO_TOPIC = bytes(TOPIC_PREFIX_LEN)
_TYPE_CLASS = {t: int(type_class(t)) for t in range(16)}
_SESSION_TYPES = frozenset((CONNECT, PINGREQ, DISCONNECT))
_EMPTY: frozenset = frozenset()


class Reason(IntEnum):
    METER_RED = 150
    NO_SESSION = 180
    SOFT_LIMIT = 181
    KEEPALIVE = 182
    REMAINING_LENGTH = 183

    def __str__(self) -> str:
        return str(self.value)

    @property
    def is_clone(self) -> bool:
        return self in (Reason.KEEPALIVE, Reason.REMAINING_LENGTH)


_NO_SESSION = frozenset((Reason.NO_SESSION,))
_SOFT_LIMIT = frozenset((Reason.SOFT_LIMIT,))
_CLONE_SETS = {
    (True, False): frozenset((Reason.KEEPALIVE,)),
    (False, True): frozenset((Reason.REMAINING_LENGTH,)),
    (True, True): frozenset((Reason.KEEPALIVE, Reason.REMAINING_LENGTH)),
}

# Drop labels outside the numbered reason codes.
L3L4_DROP = "l3l4_drop"
ACL_DROP = "acl_drop"
PARSE_DROP = "parse_drop"


class VerdictAction(Enum):
    FORWARD = "forward"
    DROP = "drop"
    FORWARD_AND_CLONE = "forward_and_clone"


FORWARD = VerdictAction.FORWARD
DROP = VerdictAction.DROP
FORWARD_AND_CLONE = VerdictAction.FORWARD_AND_CLONE


@dataclass(slots=True)
class DiagMeta:
    reason_codes: frozenset = frozenset()
    matched_table: str = ""
    rule_id: Optional[int] = None
    client_idx: int = 0
    mqtt_type: int = 0
    qos: int = 0
    topic_prefix: bytes = _NO_TOPIC
    rl_value: int = 0
    delta_t_s: float = 0.0


@dataclass(slots=True)
class Verdict:
    action: VerdictAction
    reasons: frozenset = frozenset()
    meta: DiagMeta = field(default_factory=DiagMeta)
    # numbered reason code, or one of the internal labels for unnumbered drops
    drop_reason: object = None


@dataclass(frozen=True, slots=True)
class CloneRecord:
    meta: DiagMeta
    original_frame: bytes
    emitted_ts_ns: int


@dataclass(slots=True)
class ProcessResult:
    verdict: Verdict
    forwarded_frame: Optional[bytes]
    clone: Optional[CloneRecord]
    parsed: Optional[ParsedPacket] = None


@dataclass
class PipelineStats:
    ingested: int = 0
    forwarded: int = 0
    dropped_by_reason: Counter = field(default_factory=Counter)
    cloned_by_reason: Counter = field(default_factory=Counter)
    parse_drops: int = 0
    parse_drops_by_cause: Counter = field(default_factory=Counter)
    clone_overflow: int = 0

    @property
    def dropped(self) -> int:
        return sum(self.dropped_by_reason.values())

    def to_dict(self) -> dict:
        return {
            "ingested": self.ingested,
            "forwarded": self.forwarded,
            "dropped_by_reason": {str(k): v for k, v in sorted(self.dropped_by_reason.items(), key=_key_order)},
            "cloned_by_reason": {str(k): v for k, v in sorted(self.cloned_by_reason.items(), key=_key_order)},
            "parse_drops": self.parse_drops,
            "parse_drops_by_cause": dict(sorted(self.parse_drops_by_cause.items())),
            "clone_overflow": self.clone_overflow,
        }


def _key_order(item) -> tuple:
    key = item[0]
    return (0, int(key), "") if isinstance(key, int) else (1, 0, str(key))


class CloneQueue:
    """Bounded FIFO toward the control plane; drops the oldest record when full."""

    def __init__(self, capacity: int = CLONE_QUEUE_CAPACITY) -> None:
        self.capacity = capacity
        self._items: deque[CloneRecord] = deque()
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self.overflow = 0

    def __len__(self) -> int:
        return len(self._items)

    def put(self, record: CloneRecord) -> None:
        with self._lock:
            if len(self._items) >= self.capacity:
                self._items.popleft()
                self.overflow += 1
            self._items.append(record)
            self._ready.notify_all()

    def drain(self, max_records: Optional[int] = None) -> list[CloneRecord]:
        with self._lock:
            n = len(self._items) if max_records is None else min(max_records, len(self._items))
            return [self._items.popleft() for _ in range(n)]

    def wait(self, timeout: Optional[float] = None) -> bool:
        with self._lock:
            if self._items:
                return True
            self._ready.wait(timeout)
            return bool(self._items)

    def wake(self) -> None:
        with self._lock:
            self._ready.notify_all()


class Pipeline:
    """The ingress pipeline with its tables, register bank and clone port.

    ``process_packet`` and every control-plane mutation take the same lock,
    so a packet always sees a table either before or after a change.
    """

    def __init__(self, tables: Optional[PolicyTables] = None, meter_config: Optional[MeterConfig] = None,
                 clone_capacity: int = CLONE_QUEUE_CAPACITY) -> None:
        self.tables = tables or PolicyTables()
        self.state = StateStore()
        self.meter_config = meter_config or MeterConfig()
        self.meter_overrides: dict[int, MeterConfig] = {}
        self.clones = CloneQueue(clone_capacity)
        self._stats = PipelineStats()
        self.lock = threading.RLock()
        self.on_clone: Optional[Callable[[CloneRecord], None]] = None

    # -- data path ---------------------------------------------------------

    def process_packet(self, frame: RawFrame) -> ProcessResult:
        with self.lock:
            result = self._process(frame)
        clone = result.clone
        if clone is not None:
            self.clones.put(clone)
            if self.on_clone is not None:
                self.on_clone(clone)
        return result

    def process_batch(self, frames: Iterable[RawFrame]) -> list[ProcessResult]:
        """Process frames in order under a single lock acquisition.

        Control-plane changes wait for the whole batch; clones are queued
        after the batch, in packet order.
        """
        with self.lock:
            process = self._process
            results = [process(frame) for frame in frames]
        for result in results:
            clone = result.clone
            if clone is not None:
                self.clones.put(clone)
                if self.on_clone is not None:
                    self.on_clone(clone)
        return results

    def _drop(self, reason, meta: DiagMeta, parsed: ParsedPacket, reasons: frozenset = frozenset()) -> ProcessResult:
        self._stats.dropped_by_reason[reason] += 1
        return ProcessResult(Verdict(DROP, reasons, meta, reason), None, None, parsed)

    def _process(self, frame: RawFrame) -> ProcessResult:
        stats = self._stats
        stats.ingested += 1
        data = frame.data
        now = frame.capture_ts_ns
        pkt = parse_frame(data)
        outcome = pkt.outcome
        if outcome.reason is not None and outcome.malformed:
            stats.parse_drops += 1
            stats.parse_drops_by_cause[outcome.reason] += 1
            return ProcessResult(Verdict(DROP, frozenset(), DiagMeta(matched_table="parser"), PARSE_DROP),
                                 None, None, pkt)

        tables = self.tables
        limits = tables.limits
        src_addr = pkt.src_addr
        if pkt.dst_port is not None and tables.ipv4_acl._order:
            action, rule_id = tables.ipv4_acl.lookup(src_addr, pkt.dst_addr, pkt.protocol, pkt.dst_port, len(data))
            if action is DENY:
                meta = DiagMeta(matched_table=IPV4_ACL, rule_id=rule_id, client_idx=src_addr % NUM_SLOTS)
                return self._drop(L3L4_DROP, meta, pkt)

        mqtt = pkt.mqtt
        if mqtt is None:
            stats.forwarded += 1
            return ProcessResult(Verdict(FORWARD), data, None, pkt)

        idx = src_addr % NUM_SLOTS
        state = self.state
        msg_type = mqtt.msg_type
        _, type_count = state.record_packet(idx, _TYPE_CLASS.get(msg_type, 3))

        if msg_type != PUBLISH:
            if msg_type == CONNECT:
                state.open_session(idx, mqtt.connect.keep_alive_s, now)
            elif msg_type == PINGREQ:
                state.touch_keepalive(idx, now)
            elif msg_type == DISCONNECT:
                state.close_session(idx)
            if msg_type in _SESSION_TYPES:
                stats.forwarded += 1
                meta = DiagMeta(_EMPTY, "", None, idx, msg_type, 0, _NO_TOPIC, mqtt.remaining_length)
                return ProcessResult(Verdict(FORWARD, _EMPTY, meta), data, None, pkt)
            qos = 0
            topic = _NO_TOPIC
            session_open = state.session_open[idx]
        else:
            qos = (mqtt.flags >> 1) & 0x3
            topic = mqtt.publish.topic_prefix
            session_open = state.session_open[idx]
            if not session_open:
                meta = DiagMeta(_NO_SESSION, "reg_session_open", None, idx, msg_type, qos, topic,
                                mqtt.remaining_length)
                return self._drop(Reason.NO_SESSION, meta, pkt, _NO_SESSION)
            if type_count > limits.pub_soft_limit:
                meta = DiagMeta(_SOFT_LIMIT, GLOBAL_LIMITS, None, idx, msg_type, qos, topic,
                                mqtt.remaining_length)
                return self._drop(Reason.SOFT_LIMIT, meta, pkt, _SOFT_LIMIT)

        # anomaly screening: clone reasons only
        ka_violated = False
        delta_t = 0.0
        if session_open:
            keepalive_s = state.keepalive_s[idx]
            delta_t = (now - state.last_ka_ts_ns[idx]) / 1e9
            ka_violated = keepalive_s != 0 and delta_t > limits.ka_multiplier_gamma * keepalive_s
        rl = mqtt.remaining_length
        rl_violated = rl >= limits.rl_threshold_bytes and (
            not limits.rl_require_3byte_encoding or mqtt.rl_byte_count >= 3)
        if ka_violated or rl_violated:
            clone_set = _CLONE_SETS[ka_violated, rl_violated]
        else:
            clone_set = _EMPTY

        config = self.meter_overrides.get(idx, self.meter_config) if self.meter_overrides else self.meter_config
        if state.meter.execute(idx, now, config) is RED:
            reasons = clone_set | {Reason.METER_RED}
            meta = DiagMeta(reasons, "meter_client_rate", None, idx, msg_type, qos, topic, rl, delta_t)
            return self._drop(Reason.METER_RED, meta, pkt, reasons)

        table = ""
        rule_id = None
        if msg_type == PUBLISH:
            hit = tables.mqtt_acl.lookup(src_addr, msg_type, qos, topic, len(data))
            table = MQTT_ACL
            if hit is None or hit[0] is DENY:
                if hit is not None:
                    rule_id = hit[1]
                meta = DiagMeta(clone_set, table, rule_id, idx, msg_type, qos, topic, rl, delta_t)
                return self._drop(ACL_DROP, meta, pkt, clone_set)
            rule_id = hit[1]

        meta = DiagMeta(clone_set, table, rule_id, idx, msg_type, qos, topic, rl, delta_t)
        stats.forwarded += 1
        if not clone_set:
            return ProcessResult(Verdict(FORWARD, clone_set, meta), data, None, pkt)
        cloned = stats.cloned_by_reason
        for reason in clone_set:
            cloned[reason] += 1
        return ProcessResult(Verdict(FORWARD_AND_CLONE, clone_set, meta), data,
                             CloneRecord(meta, data, now), pkt)

    # -- telemetry ---------------------------------------------------------

    def drain_clones(self, max_records: Optional[int] = None) -> list[CloneRecord]:
        return self.clones.drain(max_records)

    def pipeline_stats(self) -> PipelineStats:
        with self.lock:
            s = self._stats
            return PipelineStats(s.ingested, s.forwarded, Counter(s.dropped_by_reason),
                                 Counter(s.cloned_by_reason), s.parse_drops, Counter(s.parse_drops_by_cause),
                                 self.clones.overflow)

    def meter_config_for(self, idx: int) -> MeterConfig:
        return self.meter_overrides.get(idx, self.meter_config)


def process_packet(pipeline: Pipeline, frame: RawFrame) -> ProcessResult:
    return pipeline.process_packet(frame)


__all__ = [
    "ACL_DROP", "CloneQueue", "CloneRecord", "DROP", "DiagMeta", "FORWARD", "FORWARD_AND_CLONE",
    "L3L4_DROP", "PARSE_DROP", "Pipeline", "PipelineStats", "ProcessResult", "Reason", "TypeClass",
    "Verdict", "VerdictAction", "process_packet",
]
