"""Synthetic frame construction for MQTT-over-TCP/IPv4/Ethernet traffic."""

from __future__ import annotations

import ipaddress
import struct
from typing import Optional, Union

from .parser import (
    CONNECT, DISCONNECT, ETHERTYPE_IPV4, IPPROTO_TCP, MQTT_PORT, PINGREQ, PUBLISH,
    SUBSCRIBE, encode_remaining_length,
)

Address = Union[int, str]

BROKER_MAC = bytes.fromhex("020000000001")
TCP_ACK_PSH = 0x018


def ip_to_int(addr: Address) -> int:
    if isinstance(addr, int):
        return addr
    return int(ipaddress.IPv4Address(addr))


def int_to_ip(addr: int) -> str:
    return str(ipaddress.IPv4Address(addr))


def mac_for(addr: int) -> bytes:
    return b"\x02\x00" + addr.to_bytes(4, "big")


def checksum16(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def mqtt_string(value: Union[str, bytes]) -> bytes:
    raw = value.encode() if isinstance(value, str) else value
    return struct.pack("!H", len(raw)) + raw


def mqtt_packet(msg_type: int, flags: int, body: bytes, remaining_length: Optional[int] = None) -> bytes:
    """Fixed header + body. ``remaining_length`` overrides the encoded length
    (crafted frames that claim more bytes than they carry)."""
    rl = len(body) if remaining_length is None else remaining_length
    return bytes([(msg_type << 4) | (flags & 0x0F)]) + encode_remaining_length(rl) + body


def mqtt_connect(client_id: str = "client", keep_alive_s: int = 60, *, protocol_name: str = "MQTT",
                 protocol_level: int = 4, connect_flags: int = 0x02) -> bytes:
    body = (mqtt_string(protocol_name) + bytes([protocol_level, connect_flags])
            + struct.pack("!H", keep_alive_s) + mqtt_string(client_id))
    return mqtt_packet(CONNECT, 0, body)


def mqtt_publish(topic: Union[str, bytes], payload: bytes = b"", qos: int = 0, packet_id: int = 1, *,
                 retain: bool = False, remaining_length: Optional[int] = None) -> bytes:
    body = mqtt_string(topic)
    if qos:
        body += struct.pack("!H", packet_id)
    body += payload
    flags = (qos << 1) | int(retain)
    return mqtt_packet(PUBLISH, flags, body, remaining_length)


def mqtt_subscribe(topic_filter: str, qos: int = 0, packet_id: int = 1) -> bytes:
    return mqtt_packet(SUBSCRIBE, 0x2, struct.pack("!H", packet_id) + mqtt_string(topic_filter) + bytes([qos]))


def mqtt_pingreq() -> bytes:
    return mqtt_packet(PINGREQ, 0, b"")


def mqtt_disconnect() -> bytes:
    return mqtt_packet(DISCONNECT, 0, b"")


def tcp_segment(src: int, dst: int, payload: bytes, *, sport: int = 50000, dport: int = MQTT_PORT,
                seq: int = 1, ack: int = 1, flags: int = TCP_ACK_PSH, options: bytes = b"",
                window: int = 64240) -> bytes:
    if len(options) % 4:
        raise ValueError("TCP options must be padded to 32-bit words")
    doff = 5 + len(options) // 4
    header = struct.pack("!HHIIHHHH", sport, dport, seq, ack, (doff << 12) | flags, window, 0, 0) + options
    pseudo = struct.pack("!IIBBH", src, dst, 0, IPPROTO_TCP, len(header) + len(payload))
    csum = checksum16(pseudo + header + payload)
    return header[:16] + struct.pack("!H", csum) + header[18:] + payload


def ipv4_packet(src: int, dst: int, payload: bytes, *, protocol: int = IPPROTO_TCP, ident: int = 0,
                ttl: int = 64, options: bytes = b"", frag_offset: int = 0,
                more_fragments: bool = False, dont_fragment: bool = False) -> bytes:
    if len(options) % 4:
        raise ValueError("IPv4 options must be padded to 32-bit words")
    ihl = 5 + len(options) // 4
    frag = (frag_offset & 0x1FFF) | (0x2000 if more_fragments else 0) | (0x4000 if dont_fragment else 0)
    header = struct.pack("!BBHHHBBHII", (4 << 4) | ihl, 0, ihl * 4 + len(payload), ident & 0xFFFF,
                         frag, ttl, protocol, 0, src, dst) + options
    csum = checksum16(header)
    return header[:10] + struct.pack("!H", csum) + header[12:] + payload


def ethernet_frame(src_mac: bytes, dst_mac: bytes, payload: bytes, ether_type: int = ETHERTYPE_IPV4,
                   pad: bool = True) -> bytes:
    frame = dst_mac + src_mac + struct.pack("!H", ether_type) + payload
    if pad and len(frame) < 60:
        frame += bytes(60 - len(frame))
    return frame


def mqtt_frame(src: Address, mqtt: bytes, *, dst: Address = "10.0.0.1", sport: int = 50000,
               dport: int = MQTT_PORT, seq: int = 1, ident: int = 0, ip_options: bytes = b"",
               tcp_options: bytes = b"", frag_offset: int = 0, more_fragments: bool = False) -> bytes:
    """One MQTT control packet in one TCP segment in one Ethernet frame."""
    s, d = ip_to_int(src), ip_to_int(dst)
    seg = tcp_segment(s, d, mqtt, sport=sport, dport=dport, seq=seq, options=tcp_options)
    ip = ipv4_packet(s, d, seg, ident=ident, options=ip_options, frag_offset=frag_offset,
                     more_fragments=more_fragments)
    return ethernet_frame(mac_for(s), BROKER_MAC, ip)
