from netprofile.capture.dns import build_dns_map
from netprofile.capture.flows import (
    FlowKey,
    PacketMeta,
    Stream,
    assemble_streams,
    dump_streams_jsonl,
    label_host,
    load_streams_jsonl,
)
from netprofile.capture.pcap import PacketRecord, make_packet, read_pcap, write_pcap
from netprofile.capture.tls import extract_sni

__all__ = [
    "FlowKey",
    "PacketMeta",
    "PacketRecord",
    "Stream",
    "assemble_streams",
    "build_dns_map",
    "dump_streams_jsonl",
    "extract_sni",
    "label_host",
    "load_streams_jsonl",
    "make_packet",
    "read_pcap",
    "write_pcap",
]
