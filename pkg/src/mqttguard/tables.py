"""Match-action tables: global limits, coarse IPv4/TCP ACL, ternary topic-prefix ACL."""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Union

from .parser import PUBLISH, TOPIC_PREFIX_LEN

IPV4_ACL = "tbl_ipv4_acl"
MQTT_ACL = "tbl_mqtt_rule_acl"
GLOBAL_LIMITS = "tbl_global_limits"

_CACHE_LIMIT = 1 << 16


class RuleError(ValueError):
    """Rejected table mutation."""


class Action(Enum):
    PERMIT = "permit"
    DENY = "deny"


PERMIT, DENY = Action.PERMIT, Action.DENY


@dataclass(frozen=True)
class GlobalLimits:
    pub_soft_limit: int = 20_000
    ka_multiplier_gamma: float = 1.5
    rl_threshold_bytes: int = 16_384
    rl_require_3byte_encoding: bool = True

    def __post_init__(self) -> None:
        if self.pub_soft_limit < 0:
            raise ValueError("pub_soft_limit must be non-negative")
        if self.ka_multiplier_gamma < 0:
            raise ValueError("ka_multiplier_gamma must be non-negative")
        if self.rl_threshold_bytes < 0:
            raise ValueError("rl_threshold_bytes must be non-negative")

    def with_changes(self, **changes) -> "GlobalLimits":
        return replace(self, **changes)


def _network(value: Union[str, ipaddress.IPv4Network, None]) -> ipaddress.IPv4Network:
    if value is None or value == "*":
        return ipaddress.IPv4Network("0.0.0.0/0")
    if isinstance(value, ipaddress.IPv4Network):
        return value
    try:
        return ipaddress.IPv4Network(value, strict=False)
    except ValueError as exc:
        raise RuleError(f"bad prefix {value!r}: {exc}") from None


@dataclass(frozen=True)
class Ipv4AclEntry:
    src_prefix: ipaddress.IPv4Network = field(default_factory=lambda: _network(None))
    dst_prefix: ipaddress.IPv4Network = field(default_factory=lambda: _network(None))
    protocol: Optional[int] = None
    dst_port: Optional[int] = None
    action: Action = PERMIT
    priority: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "src_prefix", _network(self.src_prefix))
        object.__setattr__(self, "dst_prefix", _network(self.dst_prefix))
        object.__setattr__(self, "action", Action(self.action))
        if self.protocol is not None and not 0 <= self.protocol <= 255:
            raise RuleError(f"protocol out of range: {self.protocol}")
        if self.dst_port is not None and not 0 <= self.dst_port <= 0xFFFF:
            raise RuleError(f"dst_port out of range: {self.dst_port}")

    @property
    def match_key(self) -> tuple:
        return (self.src_prefix, self.dst_prefix, self.protocol, self.dst_port, self.priority)

    def matches(self, src_addr: int, dst_addr: int, protocol: int, dst_port: int) -> bool:
        src, dst = self.src_prefix, self.dst_prefix
        return ((src_addr & int(src.netmask)) == int(src.network_address)
                and (dst_addr & int(dst.netmask)) == int(dst.network_address)
                and (self.protocol is None or self.protocol == protocol)
                and (self.dst_port is None or self.dst_port == dst_port))


def prefix_to_ternary(prefix: Union[str, bytes]) -> tuple[bytes, bytes]:
    """Literal topic prefix -> (value, mask): literal octets exact, tail wildcarded.

    A trailing ``*`` is treated as the wildcard marker and stripped. Prefixes
    longer than 16 octets are cut to the 16 octets the data plane can see.
    """
    raw = prefix.encode() if isinstance(prefix, str) else bytes(prefix)
    if raw.endswith(b"*"):
        raw = raw[:-1]
    raw = raw[:TOPIC_PREFIX_LEN]
    n = len(raw)
    pad = TOPIC_PREFIX_LEN - n
    return raw + bytes(pad), b"\xff" * n + bytes(pad)


@dataclass(frozen=True)
class AclRule:
    """Ternary topic-prefix rule. ``topic_mask`` octet 0xFF = must match,
    0x00 = wildcard; any other mask octet is matched bitwise."""

    src_prefix: ipaddress.IPv4Network = field(default_factory=lambda: _network(None))
    topic_value: bytes = bytes(TOPIC_PREFIX_LEN)
    topic_mask: bytes = bytes(TOPIC_PREFIX_LEN)
    qos_set: frozenset = frozenset({0, 1, 2})
    mqtt_type: int = PUBLISH
    action: Action = PERMIT
    priority: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "src_prefix", _network(self.src_prefix))
        object.__setattr__(self, "action", Action(self.action))
        object.__setattr__(self, "qos_set", frozenset(self.qos_set))
        object.__setattr__(self, "topic_value", bytes(self.topic_value))
        object.__setattr__(self, "topic_mask", bytes(self.topic_mask))
        if len(self.topic_value) != TOPIC_PREFIX_LEN or len(self.topic_mask) != TOPIC_PREFIX_LEN:
            raise RuleError("topic value and mask must be exactly 16 octets")
        if any(v & ~m & 0xFF for v, m in zip(self.topic_value, self.topic_mask)):
            raise RuleError("topic value has bits set outside its mask (non-canonical)")
        if not self.qos_set <= {0, 1, 2}:
            raise RuleError(f"qos_set must be a subset of {{0,1,2}}: {sorted(self.qos_set)}")
        if not 0 <= self.mqtt_type <= 15:
            raise RuleError(f"mqtt_type out of range: {self.mqtt_type}")

    @classmethod
    def from_prefix(cls, prefix: Union[str, bytes], **kwargs) -> "AclRule":
        value, mask = prefix_to_ternary(prefix)
        return cls(topic_value=value, topic_mask=mask, **kwargs)

    @property
    def match_key(self) -> tuple:
        return (self.src_prefix, self.mqtt_type, self.qos_set, self.topic_value, self.topic_mask,
                self.priority)

    @property
    def literal_prefix(self) -> bytes:
        """Leading fully-masked octets, for display."""
        n = 0
        while n < TOPIC_PREFIX_LEN and self.topic_mask[n] == 0xFF:
            n += 1
        return self.topic_value[:n]


@dataclass
class HitCounter:
    packets: int = 0
    bytes: int = 0


@dataclass
class _Installed:
    rule_id: int
    entry: Union[AclRule, Ipv4AclEntry]
    counter: HitCounter
    # precomputed match words
    src_net: int = 0
    src_mask: int = 0
    value: int = 0
    mask: int = 0


class _Table:
    name = ""

    def __init__(self) -> None:
        self._entries: dict[int, _Installed] = {}
        self._order: list[_Installed] = []
        self._next_id = 1

    def __len__(self) -> int:
        return len(self._entries)

    def _compile(self, rule_id: int, entry, counter: HitCounter) -> _Installed:
        return _Installed(rule_id, entry, counter)

    def _check_duplicate(self, entry, skip_id: Optional[int] = None) -> None:
        key = entry.match_key
        for inst in self._entries.values():
            if inst.rule_id != skip_id and inst.entry.match_key == key:
                raise RuleError(f"{self.name}: duplicate match and priority (rule {inst.rule_id})")

    def _reorder(self) -> None:
        # Copy-on-write: readers holding the old list see a consistent table.
        self._order = sorted(self._entries.values(), key=lambda i: (-i.entry.priority, i.rule_id))

    def install(self, entry) -> int:
        self._check_duplicate(entry)
        rule_id = self._next_id
        self._next_id += 1
        self._entries[rule_id] = self._compile(rule_id, entry, HitCounter())
        self._reorder()
        return rule_id

    def modify(self, rule_id: int, entry) -> None:
        if rule_id not in self._entries:
            raise RuleError(f"{self.name}: unknown rule_id {rule_id}")
        self._check_duplicate(entry, skip_id=rule_id)
        self._entries[rule_id] = self._compile(rule_id, entry, self._entries[rule_id].counter)
        self._reorder()

    def delete(self, rule_id: int) -> None:
        if self._entries.pop(rule_id, None) is None:
            raise RuleError(f"{self.name}: unknown rule_id {rule_id}")
        self._reorder()

    def clear(self) -> None:
        self._entries.clear()
        self._order = []

    def get(self, rule_id: int):
        try:
            return self._entries[rule_id].entry
        except KeyError:
            raise RuleError(f"{self.name}: unknown rule_id {rule_id}") from None

    def entries(self) -> list[tuple[int, object]]:
        return [(inst.rule_id, inst.entry) for inst in sorted(self._entries.values(), key=lambda i: i.rule_id)]

    def read_counters(self) -> list[dict]:
        return [{"rule_id": i.rule_id, "packets": i.counter.packets, "bytes": i.counter.bytes}
                for i in sorted(self._entries.values(), key=lambda i: i.rule_id)]

    def reset_counters(self) -> None:
        for inst in self._entries.values():
            inst.counter.packets = inst.counter.bytes = 0


class Ipv4Acl(_Table):
    """Deny-list style: no matching entry means Permit."""

    name = IPV4_ACL

    def lookup(self, src_addr: int, dst_addr: int, protocol: int, dst_port: int,
               frame_len: int = 0) -> tuple[Action, Optional[int]]:
        for inst in self._order:
            if inst.entry.matches(src_addr, dst_addr, protocol, dst_port):
                inst.counter.packets += 1
                inst.counter.bytes += frame_len
                return inst.entry.action, inst.rule_id
        return PERMIT, None


class TopicAcl(_Table):
    """Allow-list style ternary table: the caller drops on no match.

    Lookups are memoized per (src, type, qos, prefix) key; any mutation
    invalidates the memo, so results are always those of a full scan.
    """

    name = MQTT_ACL

    def __init__(self) -> None:
        super().__init__()
        self._cache: dict[tuple, Optional[_Installed]] = {}

    def _compile(self, rule_id: int, entry: AclRule, counter: HitCounter) -> _Installed:
        net = entry.src_prefix
        return _Installed(rule_id, entry, counter, int(net.network_address), int(net.netmask),
                          int.from_bytes(entry.topic_value, "big"), int.from_bytes(entry.topic_mask, "big"))

    def _reorder(self) -> None:
        super()._reorder()
        self._cache = {}

    def clear(self) -> None:
        super().clear()
        self._cache = {}

    def _scan(self, src_addr: int, mqtt_type: int, qos: int, topic_prefix: bytes) -> Optional[_Installed]:
        topic = int.from_bytes(topic_prefix, "big")
        for inst in self._order:
            entry = inst.entry
            if ((src_addr & inst.src_mask) == inst.src_net and entry.mqtt_type == mqtt_type
                    and qos in entry.qos_set and (topic & inst.mask) == inst.value):
                return inst
        return None

    def lookup(self, src_addr: int, mqtt_type: int, qos: int, topic_prefix: bytes,
               frame_len: int = 0) -> Optional[tuple[Action, int]]:
        key = (src_addr, mqtt_type, qos, topic_prefix)
        cache = self._cache
        try:
            inst = cache[key]
        except KeyError:
            inst = self._scan(src_addr, mqtt_type, qos, topic_prefix)
            if len(cache) >= _CACHE_LIMIT:
                cache.clear()
            cache[key] = inst
        if inst is None:
            return None
        inst.counter.packets += 1
        inst.counter.bytes += frame_len
        return inst.entry.action, inst.rule_id


class PolicyTables:
    """All runtime-mutable tables of the ingress pipeline."""

    def __init__(self, limits: Optional[GlobalLimits] = None) -> None:
        self.limits = limits or GlobalLimits()
        self.ipv4_acl = Ipv4Acl()
        self.mqtt_acl = TopicAcl()

    def table(self, table_id: str) -> _Table:
        if table_id in (IPV4_ACL, "acl4", "ipv4"):
            return self.ipv4_acl
        if table_id in (MQTT_ACL, "mqtt", "topic"):
            return self.mqtt_acl
        raise RuleError(f"unknown table {table_id!r}")

    def _checked(self, table_id: str, entry) -> _Table:
        table = self.table(table_id)
        expected = Ipv4AclEntry if table is self.ipv4_acl else AclRule
        if not isinstance(entry, expected):
            raise RuleError(f"{table.name} expects {expected.__name__}, got {type(entry).__name__}")
        return table

    def install_rule(self, table_id: str, entry) -> int:
        return self._checked(table_id, entry).install(entry)

    def modify_rule(self, table_id: str, rule_id: int, entry) -> None:
        self._checked(table_id, entry).modify(rule_id, entry)

    def delete_rule(self, table_id: str, rule_id: int) -> None:
        self.table(table_id).delete(rule_id)

    def read_counters(self, table_id: str) -> list[dict]:
        return self.table(table_id).read_counters()

    def install_many(self, table_id: str, entries: Iterable) -> list[int]:
        return [self.install_rule(table_id, e) for e in entries]
