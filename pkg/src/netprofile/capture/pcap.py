"""Classic libpcap files and Ethernet/IPv4/TCP/UDP frames."""

from __future__ import annotations

import ipaddress
import struct
import sys
from array import array
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, List, Optional

from netprofile.errors import BadMagic, TruncatedFile, UnsupportedLinkType

MAGIC_BE = b"\xa1\xb2\xc3\xd4"
MAGIC_LE = b"\xd4\xc3\xb2\xa1"
LINKTYPE_ETHERNET = 1
SNAPLEN = 65535

ETH_HDR = 14
IPV4_HDR = 20
TCP_HDR = 20
UDP_HDR = 8
ETHERTYPE_IPV4 = 0x0800
PROTO_TCP = 6
PROTO_UDP = 17
_PROTO_NAMES = {PROTO_TCP: "TCP", PROTO_UDP: "UDP"}

TCP_PSH_ACK = 0x18

DEVICE_MAC = bytes.fromhex("02000000aa01")
GATEWAY_MAC = bytes.fromhex("02000000bb01")


@dataclass(frozen=True)
class PacketRecord:
    ts_sec: int
    ts_usec: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    proto: str
    payload: bytes
    link_frame: bytes

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def size(self) -> int:
        """Captured frame length in bytes; this is the packet size used as a feature."""
        return len(self.link_frame)

    @property
    def ts(self) -> float:
        return self.ts_sec + self.ts_usec * 1e-6

    @property
    def ts_us(self) -> int:
        return self.ts_sec * 1_000_000 + self.ts_usec


def internet_checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    # one's-complement sums are byte-order independent, so sum native words and swap
    total = sum(array("H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    total = ~total & 0xFFFF
    return int.from_bytes(total.to_bytes(2, sys.byteorder), "big")


def _ip_header(src_ip: str, dst_ip: str, proto: int, payload_len: int, ident: int) -> bytes:
    src = ipaddress.IPv4Address(src_ip).packed
    dst = ipaddress.IPv4Address(dst_ip).packed
    total_len = IPV4_HDR + payload_len
    hdr = struct.pack("!BBHHHBBH4s4s", 0x45, 0, total_len, ident & 0xFFFF, 0x4000, 64, proto, 0, src, dst)
    csum = internet_checksum(hdr)
    return hdr[:10] + struct.pack("!H", csum) + hdr[12:]


def _pseudo_header(src_ip: str, dst_ip: str, proto: int, length: int) -> bytes:
    return (
        ipaddress.IPv4Address(src_ip).packed
        + ipaddress.IPv4Address(dst_ip).packed
        + struct.pack("!BBH", 0, proto, length)
    )


def build_frame(
    src_ip: str,
    dst_ip: str,
    src_port: int,
    dst_port: int,
    proto: str,
    payload: bytes,
    *,
    seq: int = 0,
    ack: int = 0,
    ident: int = 0,
    src_mac: bytes = DEVICE_MAC,
    dst_mac: bytes = GATEWAY_MAC,
) -> bytes:
    """Ethernet + IPv4 + TCP/UDP frame with valid checksums."""
    if proto == "TCP":
        hdr = struct.pack(
            "!HHIIBBHHH", src_port, dst_port, seq & 0xFFFFFFFF, ack & 0xFFFFFFFF, 5 << 4, TCP_PSH_ACK, 65535, 0, 0
        )
        segment = hdr + payload
        csum = internet_checksum(_pseudo_header(src_ip, dst_ip, PROTO_TCP, len(segment)) + segment)
        segment = segment[:16] + struct.pack("!H", csum) + segment[18:]
        ip_proto = PROTO_TCP
    elif proto == "UDP":
        length = UDP_HDR + len(payload)
        segment = struct.pack("!HHHH", src_port, dst_port, length, 0) + payload
        csum = internet_checksum(_pseudo_header(src_ip, dst_ip, PROTO_UDP, length) + segment) or 0xFFFF
        segment = segment[:6] + struct.pack("!H", csum) + segment[8:]
        ip_proto = PROTO_UDP
    else:
        raise ValueError(f"unsupported transport {proto!r}")
    eth = dst_mac + src_mac + struct.pack("!H", ETHERTYPE_IPV4)
    return eth + _ip_header(src_ip, dst_ip, ip_proto, len(segment), ident) + segment


def parse_frame(ts_sec: int, ts_usec: int, frame: bytes) -> Optional[PacketRecord]:
    """Decode an Ethernet frame; returns None for anything but IPv4 TCP/UDP."""
    if len(frame) < ETH_HDR + IPV4_HDR:
        return None
    (ethertype,) = struct.unpack_from("!H", frame, 12)
    if ethertype != ETHERTYPE_IPV4:
        return None
    off = ETH_HDR
    ver_ihl = frame[off]
    if ver_ihl >> 4 != 4:
        return None
    ihl = (ver_ihl & 0x0F) * 4
    (total_len,) = struct.unpack_from("!H", frame, off + 2)
    proto = frame[off + 9]
    if proto not in _PROTO_NAMES or ihl < IPV4_HDR or total_len < ihl:
        return None
    ip_end = min(off + total_len, len(frame))
    src_ip = str(ipaddress.IPv4Address(frame[off + 12 : off + 16]))
    dst_ip = str(ipaddress.IPv4Address(frame[off + 16 : off + 20]))
    l4 = off + ihl
    if proto == PROTO_TCP:
        if ip_end - l4 < TCP_HDR:
            return None
        src_port, dst_port = struct.unpack_from("!HH", frame, l4)
        data_off = (frame[l4 + 12] >> 4) * 4
        if data_off < TCP_HDR or l4 + data_off > ip_end:
            return None
        payload = frame[l4 + data_off : ip_end]
    else:
        if ip_end - l4 < UDP_HDR:
            return None
        src_port, dst_port = struct.unpack_from("!HH", frame, l4)
        payload = frame[l4 + UDP_HDR : ip_end]
    return PacketRecord(
        ts_sec=ts_sec,
        ts_usec=ts_usec,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        proto=_PROTO_NAMES[proto],
        payload=bytes(payload),
        link_frame=bytes(frame),
    )


def read_pcap(data: bytes, counters: Optional[Counter] = None) -> List[PacketRecord]:
    """Parse a classic pcap capture into IPv4 TCP/UDP packet records.

    Frames that are not IPv4 TCP/UDP are dropped; ``counters["skipped"]`` (when a
    Counter is supplied) tallies them alongside ``counters["frames"]``.
    """
    if len(data) < 24:
        raise TruncatedFile("global header shorter than 24 bytes")
    magic = data[:4]
    if magic == MAGIC_BE:
        endian = ">"
    elif magic == MAGIC_LE:
        endian = "<"
    else:
        raise BadMagic(f"unrecognized pcap magic {magic.hex()}")
    _vmaj, _vmin, _zone, _sigfigs, _snaplen, linktype = struct.unpack_from(endian + "HHiIII", data, 4)
    if linktype != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {linktype}")
    rec_hdr = struct.Struct(endian + "IIII")
    if counters is None:
        counters = Counter()
    out = []
    pos = 24
    n = len(data)
    while pos < n:
        if pos + 16 > n:
            raise TruncatedFile(f"record header at offset {pos} exceeds file")
        ts_sec, ts_usec, incl_len, _orig_len = rec_hdr.unpack_from(data, pos)
        pos += 16
        if pos + incl_len > n:
            raise TruncatedFile(f"record body at offset {pos} exceeds file")
        counters["frames"] += 1
        rec = parse_frame(ts_sec, ts_usec, data[pos : pos + incl_len])
        pos += incl_len
        if rec is None:
            counters["skipped"] += 1
        else:
            out.append(rec)
    return out


def write_pcap(packets: Iterable[PacketRecord]) -> bytes:
    """Serialize records as a big-endian classic pcap (version 2.4, Ethernet)."""
    parts = [MAGIC_BE + struct.pack(">HHiIII", 2, 4, 0, 0, SNAPLEN, LINKTYPE_ETHERNET)]
    for p in packets:
        parts.append(struct.pack(">IIII", p.ts_sec, p.ts_usec, len(p.link_frame), len(p.link_frame)))
        parts.append(p.link_frame)
    return b"".join(parts)


def make_packet(ts_us: int, src_ip: str, dst_ip: str, src_port: int, dst_port: int, proto: str, payload: bytes, **kw) -> PacketRecord:
    """Build a frame and wrap it in a record, so the record re-parses to itself."""
    frame = build_frame(src_ip, dst_ip, src_port, dst_port, proto, payload, **kw)
    return PacketRecord(
        ts_sec=ts_us // 1_000_000,
        ts_usec=ts_us % 1_000_000,
        src_ip=src_ip,
        dst_ip=dst_ip,
        src_port=src_port,
        dst_port=dst_port,
        proto=proto,
        payload=payload,
        link_frame=frame,
    )
