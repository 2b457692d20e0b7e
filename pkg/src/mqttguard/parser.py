"""Frame decoding: Ethernet / IPv4 / TCP / MQTT fixed and variable headers.

The parser never raises on malformed input. Every early stop is recorded in
``ParsedPacket.outcome`` so the pipeline can decide whether the frame is a
parse-level drop (malformed, fragment) or simply non-MQTT traffic that may
still be forwarded.
"""

from __future__ import annotations

from dataclasses import dataclass
from struct import Struct, unpack_from
from typing import Optional

ETH_HEADER_LEN = 14
IPV4_MIN_HEADER_LEN = 20
TCP_MIN_HEADER_LEN = 20
ETHERTYPE_IPV4 = 0x0800
IPPROTO_TCP = 6
MQTT_PORT = 1883
TOPIC_PREFIX_LEN = 16
_ZERO_PREFIX = bytes(TOPIC_PREFIX_LEN)

# MQTT control packet types
CONNECT = 1
PUBLISH = 3
SUBSCRIBE = 8
PINGREQ = 12
DISCONNECT = 14

MQTT_TYPE_NAMES = {
    1: "CONNECT", 2: "CONNACK", 3: "PUBLISH", 4: "PUBACK", 5: "PUBREC",
    6: "PUBREL", 7: "PUBCOMP", 8: "SUBSCRIBE", 9: "SUBACK", 10: "UNSUBSCRIBE",
    11: "UNSUBACK", 12: "PINGREQ", 13: "PINGRESP", 14: "DISCONNECT", 15: "AUTH",
}

# Stop reasons that make a frame a parse-level drop.
MALFORMED_REASONS = frozenset({
    "truncated", "bad_version", "bad_ihl", "bad_total_length", "fragment",
    "bad_doff", "bad_remaining_length", "malformed_connect", "malformed_publish",
})


@dataclass(frozen=True, slots=True)
class RawFrame:
    data: bytes
    capture_ts_ns: int = 0


@dataclass(frozen=True, slots=True)
class ParseOutcome:
    """``layer``/``reason`` are None for a complete parse."""

    layer: Optional[str] = None
    reason: Optional[str] = None

    @property
    def complete(self) -> bool:
        return self.layer is None

    @property
    def malformed(self) -> bool:
        return self.reason in MALFORMED_REASONS

    def __str__(self) -> str:
        if self.layer is None:
            return "Complete"
        return f"StoppedAt({self.layer}, {self.reason})"


COMPLETE = ParseOutcome()
_outcomes: dict[tuple[str, str], ParseOutcome] = {}


def stopped_at(layer: str, reason: str) -> ParseOutcome:
    key = (layer, reason)
    outcome = _outcomes.get(key)
    if outcome is None:
        outcome = _outcomes[key] = ParseOutcome(layer, reason)
    return outcome


@dataclass(slots=True)
class EthernetHeader:
    dst_mac: bytes
    src_mac: bytes
    ether_type: int


@dataclass(slots=True)
class Ipv4Header:
    version: int
    ihl: int
    total_length: int
    identification: int
    more_fragments: bool
    frag_offset: int
    ttl: int
    protocol: int
    src_addr: int
    dst_addr: int


@dataclass(slots=True)
class TcpHeader:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    data_offset: int
    flags: int


@dataclass(slots=True)
class ConnectFields:
    protocol_name: bytes
    protocol_level: int
    connect_flags: int
    keep_alive_s: int


@dataclass(slots=True)
class PublishFields:
    topic_length: int
    topic_prefix: bytes
    topic_truncated: bool
    packet_id: Optional[int] = None


@dataclass(slots=True)
class MqttMessage:
    msg_type: int
    flags: int
    rl_b0: int
    rl_b1: int
    remaining_length: int
    rl_byte_count: int
    connect: Optional[ConnectFields] = None
    publish: Optional[PublishFields] = None
    # absolute frame offset of the application payload (after variable header)
    payload_offset: int = 0

    @property
    def qos(self) -> int:
        return (self.flags >> 1) & 0x3

    @property
    def has_third_rl_byte(self) -> bool:
        return self.rl_byte_count >= 3

    @property
    def type_name(self) -> str:
        return MQTT_TYPE_NAMES.get(self.msg_type, f"TYPE{self.msg_type}")


class ParsedPacket:
    """Layered view of one frame.

    ``words`` is the flat tuple of unpacked header fields (3 Ethernet, 10 IPv4,
    5 TCP); ``depth`` says how many of those layers were reached. Header
    objects (``eth``, ``ipv4``, ``tcp``) are materialized on first access; the
    pipeline only reads the flat fields (``src_addr``, ``dst_addr``,
    ``protocol``, ``dst_port``, ``mqtt``).
    """

    __slots__ = ("_words", "_depth", "mqtt", "outcome", "frame_len", "transport_payload_offset",
                 "src_addr", "dst_addr", "protocol", "dst_port", "_cache")

    def __init__(self, words: tuple = (), depth: int = 0, mqtt: Optional[MqttMessage] = None,
                 outcome: ParseOutcome = COMPLETE, frame_len: int = 0, transport_payload_offset: int = -1):
        self._words = words
        self._depth = depth
        self.mqtt = mqtt
        self.outcome = outcome
        self.frame_len = frame_len
        # absolute frame offset of the TCP payload, or -1 when TCP was not reached
        self.transport_payload_offset = transport_payload_offset
        if depth >= 2:
            self.protocol = words[9]
            self.src_addr = words[11]
            self.dst_addr = words[12]
            self.dst_port = words[14] if depth == 3 else None
        else:
            self.protocol = self.src_addr = self.dst_addr = self.dst_port = None
        self._cache = None

    def _headers(self) -> tuple:
        if self._cache is None:
            words, depth = self._words, self._depth
            eth = ip = tcp = None
            if depth >= 1:
                eth = EthernetHeader(*words[:3])
            if depth >= 2:
                ver_ihl, _tos, total_length, ident, frag_word, ttl, proto, _csum, src, dst = words[3:13]
                ip = Ipv4Header(ver_ihl >> 4, ver_ihl & 0x0F, total_length, ident, bool(frag_word & 0x2000),
                                frag_word & 0x1FFF, ttl, proto, src, dst)
            if depth >= 3:
                sport, dport, seq, ack, off_flags = words[13:18]
                tcp = TcpHeader(sport, dport, seq, ack, off_flags >> 12, off_flags & 0x01FF)
            self._cache = (eth, ip, tcp)
        return self._cache

    @property
    def eth(self) -> Optional[EthernetHeader]:
        return self._headers()[0]

    @property
    def ipv4(self) -> Optional[Ipv4Header]:
        return self._headers()[1]

    @property
    def tcp(self) -> Optional[TcpHeader]:
        return self._headers()[2]

    def __repr__(self) -> str:
        return (f"ParsedPacket(eth={self.eth!r}, ipv4={self.ipv4!r}, tcp={self.tcp!r}, mqtt={self.mqtt!r}, "
                f"outcome={self.outcome}, frame_len={self.frame_len})")


class MalformedMqtt(Exception):
    """Raised internally by the MQTT decoders; converted to a parse outcome."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def skip_ipv4_options(ihl: int) -> int:
    """Option bytes following the fixed 20-byte IPv4 header."""
    return (ihl - 5) * 4 if ihl > 5 else 0


def skip_tcp_options(data_offset: int) -> int:
    """Option bytes following the fixed 20-byte TCP header."""
    return (data_offset - 5) * 4 if data_offset > 5 else 0


def decode_remaining_length(buf: bytes, offset: int = 0, end: Optional[int] = None) -> tuple[int, int]:
    """Decode an MQTT variable-length integer starting at ``buf[offset]``.

    Returns ``(value, byte_count)``. Raises :class:`MalformedMqtt` when the
    input runs out mid-integer or a fourth octet still has its continuation
    bit set.
    """
    if end is None:
        end = len(buf)
    value = 0
    shift = 0
    for count in range(1, 5):
        pos = offset + count - 1
        if pos >= end:
            raise MalformedMqtt("bad_remaining_length")
        octet = buf[pos]
        value |= (octet & 0x7F) << shift
        if not octet & 0x80:
            return value, count
        shift += 7
    raise MalformedMqtt("bad_remaining_length")


def encode_remaining_length(value: int) -> bytes:
    if not 0 <= value <= 268_435_455:
        raise ValueError(f"remaining length out of range: {value}")
    out = bytearray()
    while True:
        octet = value & 0x7F
        value >>= 7
        if value:
            out.append(octet | 0x80)
        else:
            out.append(octet)
            return bytes(out)


def extract_connect(buf: bytes, cursor: int, end: int) -> tuple[ConnectFields, int]:
    """Read the CONNECT variable header; returns the fields and the new cursor."""
    if cursor + 2 > end:
        raise MalformedMqtt("malformed_connect")
    (name_len,) = unpack_from("!H", buf, cursor)
    cursor += 2
    name_end = cursor + name_len
    if name_end + 4 > end:
        raise MalformedMqtt("malformed_connect")
    name = bytes(buf[cursor:name_end])
    level, flags, keep_alive = unpack_from("!BBH", buf, name_end)
    return ConnectFields(name, level, flags, keep_alive), name_end + 4


def extract_publish_topic(buf: bytes, cursor: int, end: int, qos: int) -> tuple[PublishFields, int]:
    """Slice the first 16 topic octets and advance past topic and packet id."""
    if cursor + 2 > end:
        raise MalformedMqtt("malformed_publish")
    (topic_len,) = unpack_from("!H", buf, cursor)
    cursor += 2
    topic_end = cursor + topic_len
    if topic_end > end:
        raise MalformedMqtt("malformed_publish")
    if topic_len >= TOPIC_PREFIX_LEN:
        prefix = bytes(buf[cursor:cursor + TOPIC_PREFIX_LEN])
    else:
        prefix = bytes(buf[cursor:topic_end]) + _ZERO_PREFIX[topic_len:]
    packet_id = None
    cursor = topic_end
    if qos:
        if cursor + 2 > end:
            raise MalformedMqtt("malformed_publish")
        (packet_id,) = unpack_from("!H", buf, cursor)
        cursor += 2
    return PublishFields(topic_len, prefix, topic_len > TOPIC_PREFIX_LEN, packet_id), cursor


def parse_mqtt(buf: bytes, offset: int, end: int) -> MqttMessage:
    """Decode the first MQTT control packet found at ``buf[offset:end]``."""
    first = buf[offset]
    if offset + 1 < end and buf[offset + 1] < 0x80:
        remaining = rl_b0 = buf[offset + 1]
        rl_count, rl_b1 = 1, 0
    else:
        remaining, rl_count = decode_remaining_length(buf, offset + 1, end)
        rl_b0 = buf[offset + 1]
        rl_b1 = buf[offset + 2]
    msg_type = first >> 4
    cursor = offset + 1 + rl_count
    if msg_type == PUBLISH:
        # topic slicing inlined: this is the hot path
        if cursor + 2 > end:
            raise MalformedMqtt("malformed_publish")
        topic_len = (buf[cursor] << 8) | buf[cursor + 1]
        cursor += 2
        topic_end = cursor + topic_len
        if topic_end > end:
            raise MalformedMqtt("malformed_publish")
        if topic_len >= TOPIC_PREFIX_LEN:
            prefix = buf[cursor:cursor + TOPIC_PREFIX_LEN]
        else:
            prefix = buf[cursor:topic_end] + _ZERO_PREFIX[topic_len:]
        packet_id = None
        if first & 0x06:
            if topic_end + 2 > end:
                raise MalformedMqtt("malformed_publish")
            packet_id = (buf[topic_end] << 8) | buf[topic_end + 1]
            topic_end += 2
        publish = PublishFields(topic_len, bytes(prefix), topic_len > TOPIC_PREFIX_LEN, packet_id)
        return MqttMessage(msg_type, first & 0x0F, rl_b0, rl_b1, remaining, rl_count, None, publish, topic_end)
    connect = None
    if msg_type == CONNECT:
        connect, cursor = extract_connect(buf, cursor, end)
    return MqttMessage(msg_type, first & 0x0F, rl_b0, rl_b1, remaining, rl_count, connect, None, cursor)


_ETH = Struct("!6s6sH")
_IPV4 = Struct("!BBHHHBBHII")
_TCP = Struct("!HHIIH")
# Ethernet + option-less IPv4 + TCP up to the offset/flags word, in one call
_FAST = Struct("!6s6sHBBHHHBBHIIHHIIH")
_FAST_LEN = _FAST.size
_TCP_AT = ETH_HEADER_LEN + IPV4_MIN_HEADER_LEN


def parse_frame(frame: RawFrame | bytes) -> ParsedPacket:
    """Decode one Ethernet frame. Never raises for malformed bytes."""
    buf = frame.data if isinstance(frame, RawFrame) else frame
    n = len(buf)
    if n >= _FAST_LEN:
        words = _FAST.unpack_from(buf, 0)
        fast = True
    elif n >= ETH_HEADER_LEN:
        words = _ETH.unpack_from(buf, 0)
        fast = False
    else:
        return ParsedPacket((), 0, None, stopped_at("eth", "truncated"), n)
    if words[2] != ETHERTYPE_IPV4:
        return ParsedPacket(words, 1, None, stopped_at("eth", "not_ipv4"), n)

    if not fast:
        if n < ETH_HEADER_LEN + IPV4_MIN_HEADER_LEN:
            return ParsedPacket(words, 1, None, stopped_at("ipv4", "truncated"), n)
        words += _IPV4.unpack_from(buf, ETH_HEADER_LEN)
    ver_ihl = words[3]
    ihl = ver_ihl & 0x0F
    total_length = words[5]
    if ver_ihl >> 4 != 4:
        return ParsedPacket(words, 2, None, stopped_at("ipv4", "bad_version"), n)
    if ihl < 5:
        return ParsedPacket(words, 2, None, stopped_at("ipv4", "bad_ihl"), n)
    ip_header_len = IPV4_MIN_HEADER_LEN + skip_ipv4_options(ihl)
    if total_length < ip_header_len:
        return ParsedPacket(words, 2, None, stopped_at("ipv4", "bad_total_length"), n)
    # Ethernet padding past the IPv4 datagram is ignored; a datagram cut short
    # of its own total length is truncated.
    end = ETH_HEADER_LEN + total_length
    if end > n:
        return ParsedPacket(words, 2, None, stopped_at("ipv4", "truncated"), n)
    l4 = ETH_HEADER_LEN + ip_header_len
    if words[7] & 0x1FFF:
        return ParsedPacket(words, 2, None, stopped_at("ipv4", "fragment"), n)
    if words[9] != IPPROTO_TCP:
        return ParsedPacket(words, 2, None, stopped_at("ipv4", "not_tcp"), n)

    if l4 + TCP_MIN_HEADER_LEN > end:
        return ParsedPacket(words, 2, None, stopped_at("tcp", "truncated"), n)
    if not fast or l4 != _TCP_AT:
        words = words[:13] + _TCP.unpack_from(buf, l4)
    doff = words[17] >> 12
    if doff < 5:
        return ParsedPacket(words, 3, None, stopped_at("tcp", "bad_doff"), n)
    payload = l4 + TCP_MIN_HEADER_LEN + skip_tcp_options(doff)
    if payload > end:
        return ParsedPacket(words, 3, None, stopped_at("tcp", "truncated"), n)
    if words[14] != MQTT_PORT or payload == end:
        return ParsedPacket(words, 3, None, COMPLETE, n, payload)

    try:
        mqtt = parse_mqtt(buf, payload, end)
    except MalformedMqtt as exc:
        return ParsedPacket(words, 3, None, stopped_at("mqtt", exc.reason), n, payload)
    return ParsedPacket(words, 3, mqtt, COMPLETE, n, payload)
