"""DNS A-record answers to hostname maps."""

from __future__ import annotations

import ipaddress
import struct
from collections import Counter
from typing import Dict, Iterable, List, Optional, Tuple

DNS_PORT = 53
TYPE_A = 1
CLASS_IN = 1
_MAX_POINTER_HOPS = 32


class MalformedDns(ValueError):
    pass


def _read_name(msg: bytes, pos: int) -> Tuple[str, int]:
    """Decode a possibly-compressed name; returns (name, offset after the name)."""
    labels: List[str] = []
    end: Optional[int] = None
    hops = 0
    while True:
        if pos >= len(msg):
            raise MalformedDns("name runs past message")
        length = msg[pos]
        if length & 0xC0 == 0xC0:
            if pos + 2 > len(msg):
                raise MalformedDns("truncated pointer")
            if end is None:
                end = pos + 2
            hops += 1
            if hops > _MAX_POINTER_HOPS:
                raise MalformedDns("pointer loop")
            pos = ((length & 0x3F) << 8) | msg[pos + 1]
            continue
        if length & 0xC0:
            raise MalformedDns("reserved label type")
        pos += 1
        if length == 0:
            break
        if pos + length > len(msg):
            raise MalformedDns("label runs past message")
        labels.append(msg[pos : pos + length].decode("ascii", errors="strict"))
        pos += length
    return ".".join(labels), (end if end is not None else pos)


def parse_a_answers(msg: bytes) -> List[Tuple[str, str]]:
    """(queried name, IPv4 address) for each A answer of a DNS response."""
    if len(msg) < 12:
        raise MalformedDns("short header")
    _id, flags, qd, an, _ns, _ar = struct.unpack_from("!HHHHHH", msg, 0)
    if not flags & 0x8000:
        return []
    pos = 12
    qname = None
    try:
        for _ in range(qd):
            name, pos = _read_name(msg, pos)
            if pos + 4 > len(msg):
                raise MalformedDns("truncated question")
            pos += 4
            if qname is None:
                qname = name
        out = []
        for _ in range(an):
            _name, pos = _read_name(msg, pos)
            if pos + 10 > len(msg):
                raise MalformedDns("truncated answer")
            rtype, rclass, _ttl, rdlen = struct.unpack_from("!HHIH", msg, pos)
            pos += 10
            if pos + rdlen > len(msg):
                raise MalformedDns("truncated rdata")
            if rtype == TYPE_A and rclass == CLASS_IN and rdlen == 4:
                # CNAME chains resolve back to what the client asked for
                out.append((qname if qname is not None else _name, str(ipaddress.IPv4Address(msg[pos : pos + 4]))))
            pos += rdlen
    except UnicodeDecodeError as exc:
        raise MalformedDns("non-ascii label") from exc
    return out


def build_dns_map(packets: Iterable, counters: Optional[Counter] = None) -> Dict[str, str]:
    """Map answer addresses to queried hostnames from UDP/53 responses.

    Later answers overwrite earlier ones for the same address. Malformed
    messages are skipped and tallied in ``counters["dns_malformed"]``.
    """
    if counters is None:
        counters = Counter()
    out: Dict[str, str] = {}
    for pkt in packets:
        if pkt.proto != "UDP" or pkt.src_port != DNS_PORT:
            continue
        try:
            answers = parse_a_answers(pkt.payload)
        except MalformedDns:
            counters["dns_malformed"] += 1
            continue
        for name, addr in answers:
            out[addr] = name
    return out


def _encode_name(name: str) -> bytes:
    out = b""
    for label in name.rstrip(".").split("."):
        raw = label.encode("ascii")
        if not 0 < len(raw) < 64:
            raise ValueError(f"bad label {label!r}")
        out += bytes([len(raw)]) + raw
    return out + b"\x00"


def build_query(name: str, txid: int = 0) -> bytes:
    return struct.pack("!HHHHHH", txid, 0x0100, 1, 0, 0, 0) + _encode_name(name) + struct.pack("!HH", TYPE_A, CLASS_IN)


def build_response(name: str, addresses: Iterable[str], txid: int = 0, ttl: int = 300) -> bytes:
    """Response echoing the question, answers compressed against it (pointer 0xC00C)."""
    addrs = list(addresses)
    msg = struct.pack("!HHHHHH", txid, 0x8180, 1, len(addrs), 0, 0)
    msg += _encode_name(name) + struct.pack("!HH", TYPE_A, CLASS_IN)
    for addr in addrs:
        msg += struct.pack("!HHHIH", 0xC00C, TYPE_A, CLASS_IN, ttl, 4) + ipaddress.IPv4Address(addr).packed
    return msg
