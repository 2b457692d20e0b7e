"""Per-client register bank addressed by ``src_addr mod 512``."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from enum import IntEnum

from .meter import MeterBank, MeterState
from .parser import CONNECT, PUBLISH, SUBSCRIBE

NUM_SLOTS = 512
COUNTER_MAX = 2**32 - 1
TIMESTAMP_MAX = 2**64 - 1


class TypeClass(IntEnum):
    CONNECT = 0
    PUBLISH = 1
    SUBSCRIBE = 2
    OTHER = 3


def type_class(msg_type: int) -> TypeClass:
    if msg_type == CONNECT:
        return TypeClass.CONNECT
    if msg_type == PUBLISH:
        return TypeClass.PUBLISH
    if msg_type == SUBSCRIBE:
        return TypeClass.SUBSCRIBE
    return TypeClass.OTHER


def client_index(src_addr: int) -> int:
    return src_addr % NUM_SLOTS


@dataclass
class ClientState:
    """Snapshot of one register slot."""

    idx: int
    session_open: int = 0
    keepalive_s: int = 0
    last_ka_ts_ns: int = 0
    pkt_total: int = 0
    pkt_per_type: list[int] = field(default_factory=lambda: [0, 0, 0, 0])
    meter: MeterState = field(default_factory=MeterState)

    def to_record(self) -> dict:
        record = asdict(self)
        record["pkt_per_type"] = dict(zip((t.name.lower() for t in TypeClass), self.pkt_per_type))
        return record


class StateStore:
    """Fixed bank of 512 slots. Colliding clients share a slot by design.

    Not thread-safe: the pipeline serializes every access.
    """

    def __init__(self) -> None:
        self.session_open = [0] * NUM_SLOTS
        self.keepalive_s = [0] * NUM_SLOTS
        self.last_ka_ts_ns = [0] * NUM_SLOTS
        self.pkt_total = [0] * NUM_SLOTS
        self.pkt_per_type = [[0, 0, 0, 0] for _ in range(NUM_SLOTS)]
        self.meter = MeterBank(NUM_SLOTS)

    def open_session(self, idx: int, keep_alive_s: int, now_ns: int) -> None:
        self.session_open[idx] = 1
        self.keepalive_s[idx] = keep_alive_s & 0xFFFF
        self.last_ka_ts_ns[idx] = now_ns

    def close_session(self, idx: int) -> None:
        self.session_open[idx] = 0

    def record_packet(self, idx: int, tclass: int) -> tuple[int, int]:
        """Bump the total and per-type counters; returns post-increment values."""
        total = self.pkt_total[idx]
        if total < COUNTER_MAX:
            total += 1
            self.pkt_total[idx] = total
        per_type = self.pkt_per_type[idx]
        count = per_type[tclass]
        if count < COUNTER_MAX:
            count += 1
            per_type[tclass] = count
        return total, count

    def touch_keepalive(self, idx: int, now_ns: int) -> bool:
        """Refresh the keep-alive baseline; ignored while no session is open."""
        if not self.session_open[idx]:
            return False
        self.last_ka_ts_ns[idx] = now_ns
        return True

    def snapshot(self, idx: int) -> ClientState:
        if not 0 <= idx < NUM_SLOTS:
            raise IndexError(f"client index out of range: {idx}")
        return ClientState(
            idx=idx,
            session_open=self.session_open[idx],
            keepalive_s=self.keepalive_s[idx],
            last_ka_ts_ns=self.last_ka_ts_ns[idx],
            pkt_total=self.pkt_total[idx],
            pkt_per_type=list(self.pkt_per_type[idx]),
            meter=self.meter.state(idx),
        )

    def dump(self) -> list[ClientState]:
        return [self.snapshot(i) for i in range(NUM_SLOTS)]

    def load_slot(self, idx: int, *, session_open=None, keepalive_s=None, last_ka_ts_ns=None,
                  pkt_total=None, pkt_per_type=None) -> None:
        """Overwrite register values directly (test injection, state restore)."""
        if session_open is not None:
            self.session_open[idx] = int(bool(session_open))
        if keepalive_s is not None:
            self.keepalive_s[idx] = keepalive_s
        if last_ka_ts_ns is not None:
            self.last_ka_ts_ns[idx] = last_ka_ts_ns
        if pkt_total is not None:
            self.pkt_total[idx] = min(pkt_total, COUNTER_MAX)
        if pkt_per_type is not None:
            self.pkt_per_type[idx] = [min(v, COUNTER_MAX) for v in pkt_per_type]
