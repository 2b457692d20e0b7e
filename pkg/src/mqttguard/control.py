"""Runtime control surface: table and limit mutation, register reads, clone telemetry.

Every operation runs under the pipeline lock, i.e. strictly between two
packets, so the single-writer contract of the register bank holds no matter
how many threads call in.
"""

from __future__ import annotations

import dataclasses
import logging
import shlex
import threading
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .frames import ip_to_int
from .meter import MeterConfig
from .parser import MQTT_TYPE_NAMES
from .pipeline import CloneRecord, Pipeline
from .state import NUM_SLOTS, ClientState, client_index
from .tables import (
    IPV4_ACL, MQTT_ACL, AclRule, GlobalLimits, Ipv4AclEntry, RuleError, prefix_to_ternary,
)

log = logging.getLogger(__name__)

_TYPE_BY_NAME = {name.lower(): code for code, name in MQTT_TYPE_NAMES.items()}
_LIMIT_FIELDS = {f.name: f.type for f in dataclasses.fields(GlobalLimits)}
_METER_FIELDS = {f.name for f in dataclasses.fields(MeterConfig)}
_ALIASES = {"gamma": "ka_multiplier_gamma", "pps_factor": "ka_multiplier_gamma",
            "rl_threshold": "rl_threshold_bytes", "rl_require_3byte": "rl_require_3byte_encoding"}


class ConfigError(ValueError):
    """Unparseable rule or limits file content."""


# -- rule file -------------------------------------------------------------

def _parse_qos(text: str) -> frozenset:
    text = text.strip("{}[]")
    if text in ("*", ""):
        return frozenset({0, 1, 2})
    try:
        return frozenset(int(q) for q in text.split(","))
    except ValueError:
        raise ConfigError(f"bad qos set {text!r}") from None


def _wild_int(text: str) -> Optional[int]:
    if text == "*":
        return None
    try:
        return int(text, 0)
    except ValueError:
        raise ConfigError(f"expected integer or '*', got {text!r}") from None


def parse_rule_line(line: str) -> tuple[str, Union[Ipv4AclEntry, AclRule]]:
    """Parse one rule line into ``(table_id, entry)``.

    ``acl4 <prio> <permit|deny> src=<cidr> dst=<cidr> proto=<n|*> dport=<n|*>``
    ``mqtt <prio> <permit|deny> src=<cidr> type=publish qos=<set> topic_prefix="<string>"``

    ``mqtt`` lines may give ``topic_value=<hex> topic_mask=<hex>`` instead of
    ``topic_prefix`` for arbitrary ternary patterns.
    """
    try:
        tokens = shlex.split(line, comments=True)
    except ValueError as exc:
        raise ConfigError(f"{exc}: {line!r}") from None
    if len(tokens) < 3:
        raise ConfigError(f"too few fields: {line!r}")
    kind, prio_text, action = tokens[0].lower(), tokens[1], tokens[2].lower()
    try:
        priority = int(prio_text)
    except ValueError:
        raise ConfigError(f"bad priority {prio_text!r}") from None
    if action not in ("permit", "deny"):
        raise ConfigError(f"action must be permit or deny: {line!r}")
    opts = {}
    for tok in tokens[3:]:
        key, sep, value = tok.partition("=")
        if not sep:
            raise ConfigError(f"expected key=value, got {tok!r}")
        opts[key.lower()] = value
    try:
        if kind == "acl4":
            unknown = set(opts) - {"src", "dst", "proto", "dport"}
            if unknown:
                raise ConfigError(f"unknown acl4 fields {sorted(unknown)}")
            return IPV4_ACL, Ipv4AclEntry(
                src_prefix=opts.get("src", "*"), dst_prefix=opts.get("dst", "*"),
                protocol=_wild_int(opts.get("proto", "*")), dst_port=_wild_int(opts.get("dport", "*")),
                action=action, priority=priority)
        if kind == "mqtt":
            unknown = set(opts) - {"src", "type", "qos", "topic_prefix", "topic_value", "topic_mask"}
            if unknown:
                raise ConfigError(f"unknown mqtt fields {sorted(unknown)}")
            type_text = opts.get("type", "publish").lower()
            mqtt_type = _TYPE_BY_NAME.get(type_text)
            if mqtt_type is None:
                mqtt_type = int(type_text)
            if "topic_prefix" in opts:
                value, mask = prefix_to_ternary(opts["topic_prefix"])
            else:
                value = bytes.fromhex(opts.get("topic_value", "00" * 16))
                mask = bytes.fromhex(opts.get("topic_mask", "00" * 16))
            return MQTT_ACL, AclRule(
                src_prefix=opts.get("src", "*"), topic_value=value, topic_mask=mask,
                qos_set=_parse_qos(opts.get("qos", "*")), mqtt_type=mqtt_type, action=action,
                priority=priority)
    except RuleError as exc:
        raise ConfigError(f"{exc}: {line!r}") from None
    except ValueError as exc:
        raise ConfigError(f"{exc}: {line!r}") from None
    raise ConfigError(f"unknown rule kind {kind!r}")


def parse_rules(text: str) -> list[tuple[str, Union[Ipv4AclEntry, AclRule]]]:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            rules.append(parse_rule_line(line))
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return rules


def format_rule(entry: Union[Ipv4AclEntry, AclRule]) -> str:
    """Inverse of :func:`parse_rule_line`."""
    if isinstance(entry, Ipv4AclEntry):
        proto = "*" if entry.protocol is None else str(entry.protocol)
        dport = "*" if entry.dst_port is None else str(entry.dst_port)
        return (f"acl4 {entry.priority} {entry.action.value} src={entry.src_prefix} dst={entry.dst_prefix} "
                f"proto={proto} dport={dport}")
    type_name = MQTT_TYPE_NAMES.get(entry.mqtt_type, str(entry.mqtt_type)).lower()
    qos = ",".join(str(q) for q in sorted(entry.qos_set))
    head = f"mqtt {entry.priority} {entry.action.value} src={entry.src_prefix} type={type_name} qos={qos}"
    prefix = entry.literal_prefix
    value, mask = prefix_to_ternary(prefix)
    try:
        text = prefix.decode("ascii")
        printable = text.isprintable() and '"' not in text and "\\" not in text and not text.endswith("*")
    except UnicodeDecodeError:
        printable = False
    if printable and (value, mask) == (entry.topic_value, entry.topic_mask):
        return f'{head} topic_prefix="{text}"'
    return f"{head} topic_value={entry.topic_value.hex()} topic_mask={entry.topic_mask.hex()}"


# -- limits file -----------------------------------------------------------

def _coerce(key: str, value: str):
    if key == "rl_require_3byte_encoding":
        lowered = value.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected boolean, got {value!r}")
    try:
        if key in ("pub_soft_limit", "rl_threshold_bytes"):
            return int(value, 0)
        return float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected number, got {value!r}") from None


def parse_limits(text: str, base_limits: Optional[GlobalLimits] = None,
                 base_meter: Optional[MeterConfig] = None) -> tuple[GlobalLimits, MeterConfig]:
    """``key=value`` lines for GlobalLimits and MeterConfig fields."""
    limit_changes, meter_changes = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = _ALIASES.get(key.strip(), key.strip())
        if not sep:
            raise ConfigError(f"line {lineno}: expected key=value")
        if key in _LIMIT_FIELDS:
            limit_changes[key] = _coerce(key, value.strip())
        elif key in _METER_FIELDS:
            meter_changes[key] = _coerce(key, value.strip())
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        limits = dataclasses.replace(base_limits or GlobalLimits(), **limit_changes)
        meter = dataclasses.replace(base_meter or MeterConfig(), **meter_changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return limits, meter


def format_limits(limits: GlobalLimits, meter: MeterConfig) -> str:
    lines = []
    for obj in (limits, meter):
        for f in dataclasses.fields(obj):
            value = getattr(obj, f.name)
            lines.append(f"{f.name}={str(value).lower() if isinstance(value, bool) else value}")
    return "\n".join(lines) + "\n"


# -- API -------------------------------------------------------------------

class ControlAPI:
    """Control-plane handle on a running :class:`Pipeline`."""

    def __init__(self, pipeline: Pipeline) -> None:
        self.pipeline = pipeline
        self._pump: Optional[_ClonePump] = None

    # tables
    def install_rule(self, table_id: str, entry) -> int:
        with self.pipeline.lock:
            return self.pipeline.tables.install_rule(table_id, entry)

    def modify_rule(self, table_id: str, rule_id: int, entry) -> None:
        with self.pipeline.lock:
            self.pipeline.tables.modify_rule(table_id, rule_id, entry)

    def delete_rule(self, table_id: str, rule_id: int) -> None:
        with self.pipeline.lock:
            self.pipeline.tables.delete_rule(table_id, rule_id)

    def load_rules(self, text: str) -> list[tuple[str, int]]:
        """Install every rule in ``text``; all-or-nothing."""
        parsed = parse_rules(text)
        with self.pipeline.lock:
            tables = self.pipeline.tables
            installed = []
            try:
                for table_id, entry in parsed:
                    installed.append((table_id, tables.install_rule(table_id, entry)))
            except RuleError:
                for table_id, rule_id in installed:
                    tables.delete_rule(table_id, rule_id)
                raise
        return installed

    def load_rules_file(self, path: Union[str, Path]) -> list[tuple[str, int]]:
        return self.load_rules(Path(path).read_text())

    def dump_table(self, table_id: str) -> list[dict]:
        with self.pipeline.lock:
            table = self.pipeline.tables.table(table_id)
            counters = {c["rule_id"]: c for c in table.read_counters()}
            return [{"rule_id": rid, "rule": format_rule(entry), "packets": counters[rid]["packets"],
                     "bytes": counters[rid]["bytes"]} for rid, entry in table.entries()]

    def read_counters(self, table_id: str) -> list[dict]:
        with self.pipeline.lock:
            return self.pipeline.tables.read_counters(table_id)

    # limits and meters
    def set_global_limits(self, limits: GlobalLimits) -> None:
        if not isinstance(limits, GlobalLimits):
            raise TypeError("expected GlobalLimits")
        with self.pipeline.lock:
            self.pipeline.tables.limits = limits

    def update_limits(self, **changes) -> GlobalLimits:
        with self.pipeline.lock:
            limits = self.pipeline.tables.limits.with_changes(**changes)
            self.pipeline.tables.limits = limits
            return limits

    def global_limits(self) -> GlobalLimits:
        return self.pipeline.tables.limits

    def set_meter_config(self, config: MeterConfig, idx: Optional[int] = None) -> None:
        with self.pipeline.lock:
            if idx is None:
                self.pipeline.meter_config = config
            else:
                _check_idx(idx)
                self.pipeline.meter_overrides[idx] = config

    def load_limits_file(self, path: Union[str, Path]) -> None:
        with self.pipeline.lock:
            limits, meter = parse_limits(Path(path).read_text(), self.pipeline.tables.limits,
                                         self.pipeline.meter_config)
            self.pipeline.tables.limits = limits
            self.pipeline.meter_config = meter

    # registers
    def snapshot_client(self, client: Union[int, str]) -> ClientState:
        idx = resolve_client(client)
        with self.pipeline.lock:
            return self.pipeline.state.snapshot(idx)

    def dump_state(self) -> list[ClientState]:
        with self.pipeline.lock:
            return self.pipeline.state.dump()

    # telemetry
    def drain_clones(self, max_records: Optional[int] = None) -> list[CloneRecord]:
        return self.pipeline.drain_clones(max_records)

    def subscribe_clones(self, sink: Callable[[CloneRecord], None]) -> None:
        """Deliver every clone to ``sink`` exactly once, in emission order, from a
        background thread. Records the sink has not caught up with stay in the
        bounded clone queue and are subject to its drop-oldest policy."""
        if self._pump is not None:
            raise RuntimeError("a clone subscriber is already registered")
        self._pump = _ClonePump(self.pipeline, sink)
        self._pump.start()

    def flush_clones(self, timeout: float = 5.0) -> None:
        """Block until the subscriber has consumed everything queued so far."""
        if self._pump is not None:
            self._pump.flush(timeout)

    def unsubscribe_clones(self) -> None:
        if self._pump is not None:
            self._pump.stop()
            self._pump = None


class _ClonePump(threading.Thread):
    def __init__(self, pipeline: Pipeline, sink: Callable[[CloneRecord], None]) -> None:
        super().__init__(name="clone-pump", daemon=True)
        self.queue = pipeline.clones
        self.sink = sink
        self._stop_evt = threading.Event()
        self._idle = threading.Event()

    def run(self) -> None:
        while not self._stop_evt.is_set():
            batch = self.queue.drain()
            if not batch:
                self._idle.set()
                self.queue.wait(0.05)
                continue
            self._idle.clear()
            for record in batch:
                try:
                    self.sink(record)
                except Exception:
                    log.exception("clone sink failed")

    def flush(self, timeout: float) -> None:
        self._idle.clear()
        self.queue.wake()
        self._idle.wait(timeout)

    def stop(self) -> None:
        self.flush(1.0)
        self._stop_evt.set()
        self.queue.wake()
        self.join(1.0)


def _check_idx(idx: int) -> None:
    if not 0 <= idx < NUM_SLOTS:
        raise IndexError(f"client index out of range 0..{NUM_SLOTS - 1}: {idx}")


def resolve_client(client: Union[int, str]) -> int:
    """Accept a slot index or a dotted IPv4 source address."""
    if isinstance(client, str) and "." in client:
        return client_index(ip_to_int(client))
    idx = int(client)
    _check_idx(idx)
    return idx


def describe_client(state: ClientState) -> str:
    per_type = state.to_record()["pkt_per_type"]
    lines = [
        f"slot           {state.idx}",
        f"session_open   {state.session_open}",
        f"keepalive_s    {state.keepalive_s}",
        f"last_ka_ts_ns  {state.last_ka_ts_ns}",
        f"pkt_total      {state.pkt_total}",
        "pkt_per_type   " + " ".join(f"{k}={v}" for k, v in per_type.items()),
        f"meter          committed={state.meter.committed_tokens:.3f} peak={state.meter.peak_tokens:.3f} "
        f"last_update_ns={state.meter.last_update_ns}",
    ]
    return "\n".join(lines)


def rules_text(entries: Iterable[Union[Ipv4AclEntry, AclRule]]) -> str:
    return "".join(format_rule(e) + "\n" for e in entries)


__all__ = [
    "ConfigError", "ControlAPI", "describe_client", "format_limits", "format_rule", "parse_limits",
    "parse_rule_line", "parse_rules", "resolve_client", "rules_text",
]
