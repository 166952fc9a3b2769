"""Bidirectional stream assembly, host labeling, and the streams JSONL format."""

from __future__ import annotations

import ipaddress
import json
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

from netprofile.capture.dns import DNS_PORT
from netprofile.capture.tls import extract_sni


def _endpoint_order(ep: Tuple[str, int]) -> Tuple[int, int]:
    return int(ipaddress.IPv4Address(ep[0])), ep[1]


@dataclass(frozen=True)
class FlowKey:
    a: Tuple[str, int]
    b: Tuple[str, int]
    proto: str

    @classmethod
    def from_endpoints(cls, src: Tuple[str, int], dst: Tuple[str, int], proto: str) -> "FlowKey":
        if _endpoint_order(dst) < _endpoint_order(src):
            src, dst = dst, src
        return cls(src, dst, proto)

    @classmethod
    def of(cls, pkt) -> "FlowKey":
        return cls.from_endpoints((pkt.src_ip, pkt.src_port), (pkt.dst_ip, pkt.dst_port), pkt.proto)

    @classmethod
    def parse(cls, text: str) -> "FlowKey":
        eps, proto = text.rsplit("/", 1)
        left, right = eps.split("-")
        a_ip, a_port = left.rsplit(":", 1)
        b_ip, b_port = right.rsplit(":", 1)
        return cls.from_endpoints((a_ip, int(a_port)), (b_ip, int(b_port)), proto)

    def __str__(self) -> str:
        return f"{self.a[0]}:{self.a[1]}-{self.b[0]}:{self.b[1]}/{self.proto}"

    def other_endpoint(self, ip: str) -> Optional[Tuple[str, int]]:
        if self.a[0] == ip:
            return self.b
        if self.b[0] == ip:
            return self.a
        return None


class PacketMeta(NamedTuple):
    """Header-only packet view, as stored in the streams JSONL."""

    ts_sec: int
    ts_usec: int
    outgoing: int
    size: int


@dataclass
class Stream:
    key: FlowKey
    device_ip: str
    packets: list
    host: Optional[str] = None
    app_label: Optional[str] = None
    activity_label: Optional[str] = None
    extra: Dict[str, object] = field(default_factory=dict)

    @property
    def tag(self) -> Optional[str]:
        """``foreign`` if the device is not an endpoint, ``dns`` for UDP/53 flows."""
        if self.key.other_endpoint(self.device_ip) is None:
            return "foreign"
        if self.key.proto == "UDP" and DNS_PORT in (self.key.a[1], self.key.b[1]):
            return "dns"
        return None

    def timeline(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(timestamps in microseconds, outgoing flags, sizes) as int64 arrays."""
        n = len(self.packets)
        ts = np.empty(n, dtype=np.int64)
        out = np.empty(n, dtype=np.int64)
        size = np.empty(n, dtype=np.int64)
        for i, p in enumerate(self.packets):
            ts[i] = p.ts_sec * 1_000_000 + p.ts_usec
            if isinstance(p, PacketMeta):
                out[i] = p.outgoing
                size[i] = p.size
            else:
                out[i] = int(p.src_ip == self.device_ip)
                size[i] = len(p.link_frame)
        return ts, out, size


def assemble_streams(packets: Iterable, device_ip: str) -> List[Stream]:
    """Group packets by canonical 5-tuple.

    Packets inside a stream are ordered by timestamp (stable on capture order);
    streams are ordered by their first packet's timestamp.
    """
    groups: Dict[FlowKey, list] = {}
    for idx, pkt in enumerate(packets):
        groups.setdefault(FlowKey.of(pkt), []).append((pkt.ts_sec * 1_000_000 + pkt.ts_usec, idx, pkt))
    streams = []
    for key, items in groups.items():
        items.sort(key=lambda t: (t[0], t[1]))
        streams.append((items[0][0], items[0][1], Stream(key=key, device_ip=device_ip, packets=[t[2] for t in items])))
    streams.sort(key=lambda t: (t[0], t[1]))
    return [s for _, _, s in streams]


def label_host(stream: Stream, dns_map: Dict[str, str]) -> Optional[str]:
    """SNI if present, else the DNS name of the remote endpoint; stored on the stream."""
    host = extract_sni(stream)
    if host is None:
        remote = stream.key.other_endpoint(stream.device_ip)
        if remote is not None:
            host = dns_map.get(remote[0])
    stream.host = host
    return host


def stream_to_json(stream: Stream) -> dict:
    ts, out, size = stream.timeline()
    return {
        "key": str(stream.key),
        "device_ip": stream.device_ip,
        "host": stream.host,
        "app_label": stream.app_label,
        "activity_label": stream.activity_label,
        "packets": [[int(t // 1_000_000), int(t % 1_000_000), int(d), int(s)] for t, d, s in zip(ts, out, size)],
    }


def stream_from_json(obj: dict) -> Stream:
    packets = [PacketMeta(int(a), int(b), int(c), int(d)) for a, b, c, d in obj["packets"]]
    return Stream(
        key=FlowKey.parse(obj["key"]),
        device_ip=obj.get("device_ip", ""),
        packets=packets,
        host=obj.get("host"),
        app_label=obj.get("app_label"),
        activity_label=obj.get("activity_label"),
    )


def dump_streams_jsonl(streams: Iterable[Stream]) -> str:
    return "".join(json.dumps(stream_to_json(s), sort_keys=True) + "\n" for s in streams)


def load_streams_jsonl(text: str) -> List[Stream]:
    return [stream_from_json(json.loads(line)) for line in text.splitlines() if line.strip()]
