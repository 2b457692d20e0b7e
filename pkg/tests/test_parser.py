import random
import struct

import pytest
from hypothesis import given, strategies as st

from mqttguard import frames as fb
from mqttguard.parser import (
    MalformedMqtt, RawFrame, decode_remaining_length, encode_remaining_length, extract_connect,
    extract_publish_topic, parse_frame, skip_ipv4_options, skip_tcp_options,
)

import goldens as g
from oracles import topic16, varint_decode, varint_encode


def _fields(pkt):
    m = pkt.mqtt
    out = dict(msg_type=m.msg_type, qos=m.qos, remaining_length=m.remaining_length,
               rl_byte_count=m.rl_byte_count, rl_b0=m.rl_b0, rl_b1=m.rl_b1)
    if m.connect:
        out.update(protocol_name=m.connect.protocol_name, protocol_level=m.connect.protocol_level,
                   connect_flags=m.connect.connect_flags, keep_alive_s=m.connect.keep_alive_s)
    if m.publish:
        out.update(topic_length=m.publish.topic_length, topic_prefix=m.publish.topic_prefix,
                   topic_truncated=m.publish.topic_truncated, packet_id=m.publish.packet_id)
    return out


@pytest.mark.parametrize("name", sorted(g.GOLDENS))
def test_golden_frames(name):
    frame, expected = g.GOLDENS[name]
    pkt = parse_frame(RawFrame(frame, 1))
    assert pkt.outcome.complete
    got = _fields(pkt)
    for key, value in expected.items():
        assert got[key] == value, key


@pytest.mark.parametrize("name", sorted(g.GOLDENS))
def test_goldens_agree_with_scapy(name):
    scapy = pytest.importorskip("scapy.all")
    mqtt_mod = pytest.importorskip("scapy.contrib.mqtt")
    frame, _ = g.GOLDENS[name]
    ref = scapy.Ether(frame)
    pkt = parse_frame(frame)
    assert pkt.ipv4.ihl == ref[scapy.IP].ihl
    assert pkt.ipv4.src_addr == fb.ip_to_int(ref[scapy.IP].src)
    assert pkt.tcp.data_offset == ref[scapy.TCP].dataofs
    assert pkt.tcp.dst_port == ref[scapy.TCP].dport == 1883
    m = ref[mqtt_mod.MQTT]
    assert pkt.mqtt.msg_type == m.type
    assert pkt.mqtt.qos == m.QOS
    assert pkt.mqtt.remaining_length == m.len
    if ref.haslayer(mqtt_mod.MQTTConnect):
        c = ref[mqtt_mod.MQTTConnect]
        assert pkt.mqtt.connect.keep_alive_s == c.klive
        assert pkt.mqtt.connect.protocol_level == c.protolevel
        assert pkt.mqtt.connect.protocol_name == c.protoname
    if ref.haslayer(mqtt_mod.MQTTPublish):
        p = ref[mqtt_mod.MQTTPublish]
        assert pkt.mqtt.publish.topic_length == p.length
        assert pkt.mqtt.publish.topic_prefix == topic16(p.topic)
        if pkt.mqtt.qos:
            assert pkt.mqtt.publish.packet_id == p.msgid
        # cursor lands exactly on the application payload
        assert frame[pkt.mqtt.payload_offset:pkt.mqtt.payload_offset + len(p.value)] == p.value


def test_builder_frames_agree_with_scapy():
    scapy = pytest.importorskip("scapy.all")
    frame = fb.mqtt_frame("10.1.2.3", fb.mqtt_publish("ops/line1/x", b"abc", 1, 9), sport=1234,
                          ip_options=b"\x01\x01\x01\x00", tcp_options=b"\x01\x01\x01\x01")
    ref = scapy.Ether(frame)
    # checksums scapy recomputes must equal what the builder wrote
    recomputed = scapy.Ether(frame)
    del recomputed[scapy.IP].chksum
    del recomputed[scapy.TCP].chksum
    again = scapy.Ether(bytes(recomputed))
    assert again[scapy.IP].chksum == ref[scapy.IP].chksum
    assert again[scapy.TCP].chksum == ref[scapy.TCP].chksum
    assert ref[scapy.IP].ihl == 6 and ref[scapy.TCP].dataofs == 6


def test_fragment_rejected():
    pkt = parse_frame(g.FRAGMENT)
    assert pkt.ipv4.frag_offset == 185
    assert pkt.tcp is None and pkt.mqtt is None
    assert pkt.outcome.layer == "ipv4" and pkt.outcome.reason == "fragment"
    assert pkt.outcome.malformed


def test_first_fragment_still_parsed():
    pkt = parse_frame(g.FIRST_FRAGMENT)
    assert pkt.ipv4.more_fragments and pkt.ipv4.frag_offset == 0
    assert pkt.mqtt.msg_type == 3


def test_ipv6_stops_after_ethernet():
    pkt = parse_frame(g.IPV6)
    assert pkt.eth.ether_type == 0x86DD
    assert pkt.ipv4 is None
    assert str(pkt.outcome) == "StoppedAt(eth, not_ipv4)"
    assert not pkt.outcome.malformed


def test_non_tcp_and_other_port_and_pure_ack():
    udp = parse_frame(g.UDP)
    assert udp.ipv4.protocol == 17 and udp.tcp is None and udp.outcome.reason == "not_tcp"
    other = parse_frame(g.OTHER_PORT)
    assert other.outcome.complete and other.tcp.dst_port == 8080 and other.mqtt is None
    ack = parse_frame(g.PURE_ACK)
    assert ack.outcome.complete and ack.mqtt is None and ack.tcp.dst_port == 1883


def test_empty_and_tiny_frames():
    # the datagram ends at octet 56; the rest is Ethernet padding
    for n in range(0, 56):
        pkt = parse_frame(g.GOLDENS["pingreq"][0][:n])
        assert not pkt.outcome.complete
        assert pkt.mqtt is None
    assert str(parse_frame(b"").outcome) == "StoppedAt(eth, truncated)"
    assert str(parse_frame(g.GOLDENS["pingreq"][0][:54]).outcome) == "StoppedAt(ipv4, truncated)"
    assert parse_frame(g.GOLDENS["pingreq"][0][:56]).mqtt.msg_type == 12


@pytest.mark.parametrize("ihl,expected", [(5, 0), (6, 4), (15, 40), (0, 0), (4, 0)])
def test_skip_ipv4_options(ihl, expected):
    assert skip_ipv4_options(ihl) == expected


@pytest.mark.parametrize("doff,expected", [(5, 0), (8, 12), (15, 40), (3, 0)])
def test_skip_tcp_options(doff, expected):
    assert skip_tcp_options(doff) == expected


def test_bad_ihl_and_doff():
    frame = bytearray(g.GOLDENS["pingreq"][0])
    frame[14] = 0x44
    assert str(parse_frame(bytes(frame)).outcome) == "StoppedAt(ipv4, bad_ihl)"
    frame = bytearray(g.GOLDENS["pingreq"][0])
    frame[14 + 20 + 12] = 0x40
    assert str(parse_frame(bytes(frame)).outcome) == "StoppedAt(tcp, bad_doff)"


@pytest.mark.parametrize("ihl,doff", [(5, 5), (6, 5), (5, 7), (15, 15), (9, 6)])
def test_cursor_soundness(ihl, doff):
    frame = fb.mqtt_frame("10.0.0.4", fb.mqtt_pingreq(), ip_options=bytes([1]) * ((ihl - 5) * 4),
                          tcp_options=bytes([1]) * ((doff - 5) * 4))
    pkt = parse_frame(frame)
    assert pkt.transport_payload_offset == 14 + 20 + skip_ipv4_options(ihl) + 20 + skip_tcp_options(doff)
    assert pkt.mqtt.msg_type == 12


@pytest.mark.parametrize("octets,value,count", [
    ([0x7F], 127, 1),
    ([0x80, 0x01], 128, 2),
    ([0xFF, 0xFF, 0x7F], 2_097_151, 3),
    ([0x00], 0, 1),
    ([0xFF, 0xFF, 0xFF, 0x7F], 268_435_455, 4),
])
def test_decode_remaining_length(octets, value, count):
    assert decode_remaining_length(bytes(octets)) == (value, count)


@pytest.mark.parametrize("octets", [[0x80], [0xFF, 0xFF], [0x80, 0x80, 0x80, 0x80], [0xFF] * 5, []])
def test_decode_remaining_length_malformed(octets):
    with pytest.raises(MalformedMqtt):
        decode_remaining_length(bytes(octets))


def test_varint_round_trip_sampled():
    rng = random.Random(7)
    samples = [0, 127, 128, 16_383, 16_384, 2_097_151, 2_097_152, 268_435_455]
    samples += [rng.randrange(268_435_456) for _ in range(20_000)]
    for v in samples:
        enc = encode_remaining_length(v)
        assert enc == varint_encode(v)
        assert decode_remaining_length(enc) == (v, len(enc)) == varint_decode(enc)


@given(st.binary(min_size=0, max_size=6))
def test_varint_decode_matches_oracle(octets):
    ref = varint_decode(octets)
    if ref is None:
        with pytest.raises(MalformedMqtt):
            decode_remaining_length(octets)
    else:
        assert decode_remaining_length(octets) == ref


def test_rl_raw_octets_exposed():
    frame = fb.mqtt_frame("10.0.0.4", fb.mqtt_publish("a/b", b"", 0, 1, remaining_length=200_000))
    m = parse_frame(frame).mqtt
    enc = encode_remaining_length(200_000)
    assert (m.rl_b0, m.rl_b1, m.rl_byte_count) == (enc[0], enc[1], 3)
    assert m.has_third_rl_byte
    assert m.remaining_length == 200_000


def test_extract_connect_and_errors():
    body = g.CONNECT_31[2:]
    fields, cursor = extract_connect(body, 0, len(body))
    assert (fields.protocol_name, fields.protocol_level, fields.keep_alive_s) == (b"MQIsdp", 3, 10)
    assert cursor == 2 + 6 + 4
    with pytest.raises(MalformedMqtt):
        extract_connect(body, 0, 9)
    frame = fb.mqtt_frame("10.0.0.4", fb.mqtt_packet(1, 0, b"\x00\x04MQ"))
    assert str(parse_frame(frame).outcome) == "StoppedAt(mqtt, malformed_connect)"


def test_extract_publish_topic_cursor():
    body = g.PUB_40[2:]
    fields, cursor = extract_publish_topic(body, 0, len(body), qos=2)
    assert fields.topic_truncated and fields.topic_prefix == g.LONG_TOPIC[:16]
    assert cursor == 2 + 40 + 2
    assert body[cursor:] == b"ok"
    short = g.PUB_SHORT[2:]
    fields, cursor = extract_publish_topic(short, 0, len(short), qos=0)
    assert fields.topic_prefix == b"a/b" + bytes(13) and fields.packet_id is None and cursor == 5
    with pytest.raises(MalformedMqtt):
        extract_publish_topic(b"\x00\x10abc", 0, 5, qos=0)


def test_topic_length_overrun_is_malformed():
    frame = fb.mqtt_frame("10.0.0.4", fb.mqtt_packet(3, 0, b"\x00\x40short"))
    pkt = parse_frame(frame)
    assert pkt.mqtt is None and pkt.outcome.reason == "malformed_publish" and pkt.outcome.malformed


def test_only_first_mqtt_message_parsed():
    frame = fb.mqtt_frame("10.0.0.4", fb.mqtt_pingreq() + fb.mqtt_publish("a/b", b"", 0, 1))
    assert parse_frame(frame).mqtt.msg_type == 12


def test_ethernet_padding_ignored():
    frame, _ = g.GOLDENS["publish_short"]
    padded = frame + b"\xff" * 40
    assert parse_frame(padded).mqtt.publish.topic_prefix == b"a/b" + bytes(13)


@given(st.binary(min_size=0, max_size=300), st.integers(0, 65535))
def test_topic_prefix_invariant(topic, extra):
    frame = fb.mqtt_frame("10.0.0.4", fb.mqtt_publish(topic, b"p", (extra % 3), extra % 65535 + 1))
    pub = parse_frame(frame).mqtt.publish
    assert pub.topic_length == len(topic)
    assert pub.topic_prefix == topic16(topic)
    assert len(pub.topic_prefix) == 16
    assert pub.topic_truncated == (len(topic) > 16)


@given(st.binary(max_size=2000))
def test_totality_random_bytes(data):
    pkt = parse_frame(data)
    assert pkt.outcome is not None
    if pkt.mqtt is not None:
        assert pkt.tcp is not None and pkt.tcp.dst_port == 1883


@given(st.sampled_from(sorted(g.GOLDENS)), st.lists(st.tuples(st.integers(0, 400), st.integers(0, 255)),
                                                    max_size=8), st.integers(0, 400))
def test_mutated_goldens_never_crash(name, edits, cut):
    data = bytearray(g.GOLDENS[name][0])
    for pos, val in edits:
        if pos < len(data):
            data[pos] = val
    pkt = parse_frame(bytes(data[:cut] if cut < len(data) else data))
    if pkt.ipv4 is not None and pkt.ipv4.frag_offset:
        assert pkt.mqtt is None and pkt.tcp is None
    if pkt.mqtt is not None and pkt.mqtt.publish is not None:
        assert pkt.mqtt.publish.topic_truncated == (pkt.mqtt.publish.topic_length > 16)


@given(st.integers(1, 8191), st.booleans())
def test_fragment_filter_property(offset, mf):
    frame = g.build(g.tcp(g.PUB_16), frag=offset, mf=mf)
    pkt = parse_frame(frame)
    assert pkt.mqtt is None and pkt.tcp is None


def test_header_views():
    frame, _ = g.GOLDENS["options"]
    pkt = parse_frame(frame)
    assert pkt.eth.src_mac == g.SRC_MAC and pkt.eth.ether_type == 0x0800
    assert pkt.ipv4.ihl == 8 and pkt.ipv4.total_length == len(frame) - 14
    assert pkt.ipv4.ttl == 64 and pkt.ipv4.identification == 0x1234
    assert pkt.tcp.src_port == 41000 and pkt.tcp.flags & 0x18 == 0x18
    assert struct.unpack("!I", g.SRC_IP)[0] == pkt.src_addr
