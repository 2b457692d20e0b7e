"""KeepAlive-gap and Remaining-Length screening.

Both checks only ever produce clone reasons; neither drops a packet.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .tables import GlobalLimits


class _KeepAliveView(Protocol):
    keepalive_s: int
    last_ka_ts_ns: int


@dataclass(frozen=True)
class AnomalyFlags:
    keepalive_violation: bool = False
    rl_violation: bool = False
    delta_t_s: float = 0.0
    rl_value: int = 0


def keepalive_gap(keepalive_s: int, last_ka_ts_ns: int, now_ns: int, gamma: float) -> tuple[bool, float]:
    delta_t_s = (now_ns - last_ka_ts_ns) / 1e9
    if keepalive_s == 0:
        return False, delta_t_s
    return delta_t_s > gamma * keepalive_s, delta_t_s


def check_keepalive(state: _KeepAliveView, now_ns: int, gamma: float) -> tuple[bool, float]:
    """Return ``(violated, delta_t_s)`` for the time since the last keep-alive.

    A violation is a strict excess over ``gamma * keepalive_s``; a zero
    KeepAlive disables the check. The caller must not move the baseline on a
    violation.
    """
    return keepalive_gap(state.keepalive_s, state.last_ka_ts_ns, now_ns, gamma)


def check_remaining_length(remaining_length: int, rl_byte_count: int, limits: GlobalLimits) -> bool:
    if remaining_length < limits.rl_threshold_bytes:
        return False
    return not limits.rl_require_3byte_encoding or rl_byte_count >= 3


def screen(keepalive_s: int, last_ka_ts_ns: int, session_open: int, remaining_length: int,
           rl_byte_count: int, now_ns: int, limits: GlobalLimits) -> AnomalyFlags:
    ka_violated, delta = False, 0.0
    if session_open:
        ka_violated, delta = keepalive_gap(keepalive_s, last_ka_ts_ns, now_ns, limits.ka_multiplier_gamma)
    rl_violated = check_remaining_length(remaining_length, rl_byte_count, limits)
    return AnomalyFlags(ka_violated, rl_violated, delta, remaining_length)
