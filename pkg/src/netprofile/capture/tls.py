"""TLS ClientHello server_name extraction (and a minimal ClientHello builder)."""

from __future__ import annotations

import struct
from typing import Optional

RECORD_HANDSHAKE = 22
HANDSHAKE_CLIENT_HELLO = 1
EXT_SERVER_NAME = 0
NAME_TYPE_HOST = 0


def _u8(buf: bytes, pos: int) -> int:
    if pos + 1 > len(buf):
        raise IndexError(pos)
    return buf[pos]


def _u16(buf: bytes, pos: int) -> int:
    if pos + 2 > len(buf):
        raise IndexError(pos)
    return (buf[pos] << 8) | buf[pos + 1]


def _u24(buf: bytes, pos: int) -> int:
    if pos + 3 > len(buf):
        raise IndexError(pos)
    return (buf[pos] << 16) | (buf[pos + 1] << 8) | buf[pos + 2]


def _server_name(ext: bytes) -> Optional[str]:
    list_len = _u16(ext, 0)
    end = min(2 + list_len, len(ext))
    pos = 2
    while pos + 3 <= end:
        name_type = ext[pos]
        name_len = _u16(ext, pos + 1)
        pos += 3
        if pos + name_len > end:
            return None
        if name_type == NAME_TYPE_HOST:
            try:
                name = ext[pos : pos + name_len].decode("utf-8")
            except UnicodeDecodeError:
                return None
            return name or None
        pos += name_len
    return None


def sni_from_payload(data: bytes) -> Optional[str]:
    """Hostname from a TLS record carrying a ClientHello, or None.

    Every length field is checked against the slice it claims; malformed input
    yields None rather than an exception.
    """
    try:
        if len(data) < 5 or data[0] != RECORD_HANDSHAKE:
            return None
        rec_len = _u16(data, 3)
        body = data[5 : 5 + rec_len]
        if _u8(body, 0) != HANDSHAKE_CLIENT_HELLO:
            return None
        hs_len = _u24(body, 1)
        hello = body[4 : 4 + hs_len]
        pos = 2 + 32  # client_version, random
        pos += 1 + _u8(hello, pos)  # session_id
        pos += 2 + _u16(hello, pos)  # cipher_suites
        pos += 1 + _u8(hello, pos)  # compression_methods
        if pos + 2 > len(hello):
            return None
        ext_end = min(pos + 2 + _u16(hello, pos), len(hello))
        pos += 2
        while pos + 4 <= ext_end:
            ext_type = _u16(hello, pos)
            ext_len = _u16(hello, pos + 2)
            pos += 4
            if pos + ext_len > ext_end:
                return None
            if ext_type == EXT_SERVER_NAME:
                return _server_name(hello[pos : pos + ext_len])
            pos += ext_len
    except IndexError:
        return None
    return None


def extract_sni(stream) -> Optional[str]:
    """First SNI found in the TCP payloads of ``stream``.

    No TCP reassembly: the ClientHello must sit in a single segment.
    """
    for pkt in stream.packets:
        if getattr(pkt, "proto", None) != "TCP" or not pkt.payload:
            continue
        name = sni_from_payload(pkt.payload)
        if name is not None:
            return name
    return None


def build_client_hello(hostname: Optional[str], random: bytes = bytes(32), with_extensions: bool = True) -> bytes:
    """TLS 1.2 ClientHello record; ``hostname=None`` omits the server_name extension."""
    if len(random) != 32:
        raise ValueError("random must be 32 bytes")
    ciphers = struct.pack("!HHH", 0xC02F, 0xC030, 0x009C)
    hello = struct.pack("!H", 0x0303) + random
    hello += b"\x00"  # empty session id
    hello += struct.pack("!H", len(ciphers)) + ciphers
    hello += b"\x01\x00"  # one compression method: null
    if with_extensions:
        exts = b""
        if hostname is not None:
            name = hostname.encode("utf-8")
            entry = struct.pack("!BH", NAME_TYPE_HOST, len(name)) + name
            sn = struct.pack("!H", len(entry)) + entry
            exts += struct.pack("!HH", EXT_SERVER_NAME, len(sn)) + sn
        # supported_groups, so the block is never trivially just SNI
        groups = struct.pack("!HHH", 4, 0x001D, 0x0017)
        exts += struct.pack("!HH", 0x000A, len(groups)) + groups
        hello += struct.pack("!H", len(exts)) + exts
    hs = struct.pack("!B", HANDSHAKE_CLIENT_HELLO) + len(hello).to_bytes(3, "big") + hello
    return struct.pack("!BHH", RECORD_HANDSHAKE, 0x0301, len(hs)) + hs
