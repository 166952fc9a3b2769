import struct
from collections import Counter

import pytest

from netprofile.capture import build_dns_map
from netprofile.capture.dns import MalformedDns, build_query, build_response, parse_a_answers
from netprofile.capture.pcap import make_packet


def qname(name: str) -> bytes:
    return b"".join(bytes([len(p)]) + p.encode() for p in name.split(".")) + b"\x00"


def hand_response(name: str, addrs, compress=True) -> bytes:
    msg = struct.pack(">HHHHHH", 0x1234, 0x8180, 1, len(addrs), 0, 0)
    msg += qname(name) + b"\x00\x01\x00\x01"
    for a in addrs:
        owner = b"\xc0\x0c" if compress else qname(name)
        msg += owner + b"\x00\x01\x00\x01" + struct.pack(">IH", 60, 4) + bytes(int(x) for x in a.split("."))
    return msg


def udp(payload, src_port=53, ts=0):
    return make_packet(ts, "10.0.0.1", "10.0.0.2", src_port, 40000, "UDP", payload)


def test_no_dns_traffic():
    assert build_dns_map([make_packet(0, "10.0.0.2", "1.2.3.4", 1, 443, "TCP", b"x")]) == {}


def test_single_answer():
    assert build_dns_map([udp(hand_response("e.whatsapp.net", ["1.2.3.4"]))]) == {"1.2.3.4": "e.whatsapp.net"}


def test_two_answers_both_mapped():
    msg = hand_response("cdn.example.com", ["1.2.3.4", "5.6.7.8"], compress=False)
    assert build_dns_map([udp(msg)]) == {"1.2.3.4": "cdn.example.com", "5.6.7.8": "cdn.example.com"}


def test_later_answer_overwrites():
    m = build_dns_map([udp(hand_response("a.com", ["9.9.9.9"]), ts=1), udp(hand_response("b.com", ["9.9.9.9"]), ts=2)])
    assert m == {"9.9.9.9": "b.com"}


def test_queries_and_other_ports_ignored():
    assert build_dns_map([udp(build_query("a.com"), src_port=40000), udp(hand_response("a.com", ["1.1.1.1"]), src_port=5353)]) == {}


def test_builder_matches_hand_layout():
    assert build_response("e.whatsapp.net", ["1.2.3.4"], txid=0x1234, ttl=60) == hand_response("e.whatsapp.net", ["1.2.3.4"])


def test_cname_chain_maps_to_queried_name():
    msg = struct.pack(">HHHHHH", 1, 0x8180, 1, 2, 0, 0) + qname("www.x.com") + b"\x00\x01\x00\x01"
    target = qname("edge.cdn.net")
    msg += b"\xc0\x0c" + b"\x00\x05\x00\x01" + struct.pack(">IH", 60, len(target)) + target
    msg += qname("edge.cdn.net") + b"\x00\x01\x00\x01" + struct.pack(">IH", 60, 4) + bytes([7, 7, 7, 7])
    assert parse_a_answers(msg) == [("www.x.com", "7.7.7.7")]


@pytest.mark.parametrize(
    "msg",
    [
        b"\x00" * 5,
        struct.pack(">HHHHHH", 1, 0x8180, 1, 1, 0, 0) + b"\xc0\x0c",  # pointer to itself
        struct.pack(">HHHHHH", 1, 0x8180, 1, 0, 0, 0) + b"\x05ab",  # label past end
        hand_response("a.com", ["1.2.3.4"])[:-2],  # truncated rdata
    ],
)
def test_malformed_counted(msg):
    with pytest.raises(MalformedDns):
        parse_a_answers(msg)
    c = Counter()
    assert build_dns_map([udp(msg)], c) == {}
    assert c["dns_malformed"] == 1
