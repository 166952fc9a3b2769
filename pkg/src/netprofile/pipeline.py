"""Capture-to-streams ingestion shared by the command line and the scripts."""

from __future__ import annotations

import json
import os
from collections import Counter
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from netprofile.capture import assemble_streams, build_dns_map, label_host, read_pcap
from netprofile.capture.flows import Stream
from netprofile.errors import BadConfig


def ingest_bytes(data: bytes, device_ip: str, counters: Optional[Counter] = None) -> List[Stream]:
    """Parse one capture, group it into streams and attach host names."""
    counters = Counter() if counters is None else counters
    packets = read_pcap(data, counters)
    dns_map = build_dns_map(packets, counters)
    streams = assemble_streams(packets, device_ip)
    for s in streams:
        if s.tag is None:
            label_host(s, dns_map)
        counters[f"streams_{s.tag or 'kept'}"] += 1
    return streams


def read_labels(path: str) -> Dict[Tuple[str, str], Tuple[Optional[str], Optional[str]]]:
    """Sidecar lines ``{"pcap", "flow_key", "app", "activity"}`` keyed by (pcap basename, flow key)."""
    out = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out[(os.path.basename(rec["pcap"]), rec["flow_key"])] = (rec.get("app"), rec.get("activity"))
            except (json.JSONDecodeError, KeyError) as exc:
                raise BadConfig(f"{path}:{n}: bad label line ({exc})") from None
    return out


def apply_labels(name: str, streams: Iterable[Stream], labels: Mapping) -> int:
    hits = 0
    for s in streams:
        lab = labels.get((os.path.basename(name), str(s.key)))
        if lab is not None:
            s.app_label, s.activity_label = lab
            hits += 1
    return hits


def ingest_files(
    paths: Sequence[str], device_ip: str, labels: Optional[Mapping] = None
) -> Tuple[List[Stream], dict]:
    """Ingest several captures; returns (streams, report)."""
    counters: Counter = Counter()
    out: List[Stream] = []
    per_file = {}
    for path in paths:
        with open(path, "rb") as fh:
            data = fh.read()
        streams = ingest_bytes(data, device_ip, counters)
        if labels is not None:
            counters["labeled"] += apply_labels(path, streams, labels)
        per_file[os.path.basename(path)] = len(streams)
        out += streams
    report = {
        "files": per_file,
        "frames": counters["frames"],
        "skipped_frames": counters["skipped"],
        "dns_malformed": counters["dns_malformed"],
        "streams": len(out),
        "foreign_streams": counters["streams_foreign"],
        "dns_streams": counters["streams_dns"],
        "kept_streams": counters["streams_kept"],
        "labeled_streams": counters["labeled"],
        "hosts": sum(1 for s in out if s.host is not None),
    }
    return out, report
