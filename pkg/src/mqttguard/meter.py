"""Two-rate three-color packet meter (color-blind), one instance per client slot.

Buckets hold fractional packet tokens and refill from the packet's own
capture timestamp, so a replay of the same frames always colors identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional


class Color(Enum):
    GREEN = "green"
    YELLOW = "yellow"
    RED = "red"


GREEN, YELLOW, RED = Color.GREEN, Color.YELLOW, Color.RED


@dataclass(frozen=True)
class MeterConfig:
    cir_pps: float = 20_000.0
    cbs_pkts: float = 2_000.0
    pir_pps: float = 40_000.0
    pbs_pkts: float = 4_000.0

    def __post_init__(self) -> None:
        if not self.cir_pps > 0:
            raise ValueError("cir_pps must be positive")
        if self.pir_pps < self.cir_pps:
            raise ValueError("pir_pps must be >= cir_pps")
        if self.cbs_pkts < 1 or self.pbs_pkts < 1:
            raise ValueError("burst sizes must be >= 1 packet")


@dataclass
class MeterState:
    committed_tokens: float = 0.0
    peak_tokens: float = 0.0
    last_update_ns: Optional[int] = None


class MeterBank:
    """Meter state for ``size`` slots. A slot that has never metered a packet
    starts with both buckets full."""

    def __init__(self, size: int) -> None:
        self.committed = [0.0] * size
        self.peak = [0.0] * size
        self.last_ns: list[Optional[int]] = [None] * size

    def execute(self, idx: int, now_ns: int, config: MeterConfig) -> Color:
        last = self.last_ns[idx]
        if last is None:
            tc = config.cbs_pkts
            tp = config.pbs_pkts
        else:
            if now_ns < last:
                # out-of-order timestamps never rewind the clock
                now_ns = last
            elapsed = (now_ns - last) / 1e9
            tc = self.committed[idx] + elapsed * config.cir_pps
            if tc > config.cbs_pkts:
                tc = config.cbs_pkts
            tp = self.peak[idx] + elapsed * config.pir_pps
            if tp > config.pbs_pkts:
                tp = config.pbs_pkts
        self.last_ns[idx] = now_ns
        if tp < 1.0:
            color = RED
        elif tc < 1.0:
            tp -= 1.0
            color = YELLOW
        else:
            tc -= 1.0
            tp -= 1.0
            color = GREEN
        self.committed[idx] = tc
        self.peak[idx] = tp
        return color

    def state(self, idx: int) -> MeterState:
        return MeterState(self.committed[idx], self.peak[idx], self.last_ns[idx])

    def reset(self, idx: int) -> None:
        self.committed[idx] = 0.0
        self.peak[idx] = 0.0
        self.last_ns[idx] = None


def meter_execute(bank: MeterBank, idx: int, now_ns: int, config: MeterConfig) -> Color:
    return bank.execute(idx, now_ns, config)
