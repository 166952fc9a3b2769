"""Deterministic labeled traffic generator.

Every (application, activity) class is a small generative model: a geometric
stream length, log-normal frame sizes per direction, exponential gaps and a
two-state Markov chain for the direction of successive packets. A generated
event is a DNS lookup of the class host, a TLS ClientHello naming it, then the
data packets. Background ("impertinent") traffic is a mixture of host profiles.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from netprofile.capture.dns import build_query, build_response
from netprofile.capture.flows import FlowKey, Stream
from netprofile.capture.pcap import ETH_HDR, IPV4_HDR, TCP_HDR, make_packet, write_pcap
from netprofile.capture.tls import build_client_hello
from netprofile.config import coerce
from netprofile.dataset import ACTIVITIES, APPS, event_name
from netprofile.errors import BadConfig
from netprofile.fsutil import atomic_write_bytes
from netprofile.profiler import VOCAB, OTHER
from netprofile.rng import substream

MAX_FRAME = 1514
MIN_FRAME = ETH_HDR + IPV4_HDR + TCP_HDR + 6  # 60-byte Ethernet minimum
BASE_TS = 1_600_000_000
HTTPS = 443
MAX_EVENTS = (65536 - 1024) // 2
# pcap file and label class of every generated class
CLASSES: Tuple[str, ...] = tuple(event_name(a, act) for a in APPS for act in ACTIVITIES[a]) + ("impertinent",)
DEFAULT_COUNTS: Dict[str, int] = {
    "facebook/post_text": 237,
    "facebook/post_image": 423,
    "youtube/play_video": 102,
    "youtube/comment": 129,
    "whatsapp/send_message": 83,
    "whatsapp/send_image": 203,
    "gmail/mail": 81,
    "impertinent": 7068,
}


@dataclass(frozen=True)
class ClassProfile:
    app: str
    activity: Optional[str]
    hostname: str
    length_p: float = 0.1  # geometric parameter; mean extra length (1 - p) / p
    min_length: int = 1
    out_mu: float = 6.0  # log-bytes
    out_sigma: float = 0.25
    in_mu: float = 6.0
    in_sigma: float = 0.25
    rate: float = 20.0  # packets per second
    constant_gap: Optional[float] = None  # seconds; overrides the exponential
    p_stay_out: float = 0.5  # P(next outgoing | outgoing)
    p_stay_in: float = 0.5  # P(next incoming | incoming)
    p_first_out: float = 0.5
    suppress_sni: bool = False

    @property
    def transition(self) -> np.ndarray:
        """Rows: current state (out, in); columns: next state (out, in)."""
        return np.array([[self.p_stay_out, 1 - self.p_stay_out], [1 - self.p_stay_in, self.p_stay_in]])

    @property
    def mean_size(self) -> Tuple[float, float]:
        """Log-normal means (before rounding and capping) of (outgoing, incoming) frames."""
        return math.exp(self.out_mu + self.out_sigma**2 / 2), math.exp(self.in_mu + self.in_sigma**2 / 2)

    def validate(self) -> None:
        for name in ("length_p", "p_stay_out", "p_stay_in", "p_first_out"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise BadConfig(f"{self.hostname}: {name}={v} outside [0, 1]")
        if self.length_p == 0:
            raise BadConfig(f"{self.hostname}: length_p must be positive")
        if self.min_length < 1:
            raise BadConfig(f"{self.hostname}: min_length must be >= 1")
        if self.out_sigma < 0 or self.in_sigma < 0:
            raise BadConfig(f"{self.hostname}: sigma must be >= 0")
        if self.constant_gap is None and self.rate <= 0:
            raise BadConfig(f"{self.hostname}: rate must be positive")
        if self.constant_gap is not None and self.constant_gap <= 0:
            raise BadConfig(f"{self.hostname}: constant_gap must be positive")


def _p(app, act, host, n, p, out, inn, rate, stay, first, **kw) -> ClassProfile:
    return ClassProfile(
        app, act, host, length_p=p, min_length=n, out_mu=math.log(out), in_mu=math.log(inn), rate=rate,
        p_stay_out=stay[0], p_stay_in=stay[1], p_first_out=first, **kw,
    )


# Classes differ in frame sizes per direction, pacing, direction runs and length.
# Sizes are given as log-normal medians in bytes.
DEFAULT_PROFILES: Dict[str, ClassProfile] = {
    "facebook/post_text": _p("facebook", "post_text", "graph.facebook.com", 12, 0.08, 260, 420, 15.0, (0.3, 0.4), 0.9),
    "facebook/post_image": _p("facebook", "post_image", "graph.facebook.com", 40, 0.03, 1350, 180, 80.0, (0.9, 0.3), 0.9),
    "youtube/play_video": _p("youtube", "play_video", "r4.googlevideo.com", 60, 0.02, 110, 1400, 300.0, (0.1, 0.95), 0.7),
    "youtube/comment": _p("youtube", "comment", "r4.googlevideo.com", 10, 0.1, 480, 820, 6.0, (0.5, 0.5), 0.8),
    "whatsapp/send_message": _p(
        "whatsapp", "send_message", "e4.whatsapp.net", 6, 0.2, 160, 120, 4.0, (0.6, 0.2), 1.0, suppress_sni=True
    ),
    "whatsapp/send_image": _p(
        "whatsapp", "send_image", "e4.whatsapp.net", 30, 0.04, 1100, 100, 60.0, (0.85, 0.2), 1.0, suppress_sni=True
    ),
    "gmail/mail": _p("gmail", "mail", "mail.google.com", 20, 0.06, 700, 300, 25.0, (0.7, 0.5), 0.8),
    # background mixture
    "impertinent/ads": _p("impertinent", None, "ads.adnet-cdn.net", 4, 0.2, 90, 1200, 120.0, (0.2, 0.7), 0.6),
    "impertinent/telemetry": _p("impertinent", None, "telemetry.os-vendor.net", 3, 0.3, 560, 70, 1.0, (0.5, 0.1), 1.0),
    "impertinent/push": _p("impertinent", None, "push.notify-svc.net", 2, 0.4, 75, 75, 0.5, (0.5, 0.5), 0.5),
    "impertinent/update": _p("impertinent", None, "dl.store-update.net", 80, 0.01, 70, 900, 30.0, (0.05, 0.98), 1.0),
}
DEFAULT_MIXTURE: Dict[str, float] = {
    "impertinent/ads": 0.4,
    "impertinent/telemetry": 0.3,
    "impertinent/push": 0.2,
    "impertinent/update": 0.1,
}


@dataclass
class SynthConfig:
    profiles: Dict[str, ClassProfile] = field(default_factory=lambda: dict(DEFAULT_PROFILES))
    counts: Dict[str, int] = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    class_scale: Dict[str, float] = field(default_factory=dict)
    mixture: Dict[str, float] = field(default_factory=lambda: dict(DEFAULT_MIXTURE))
    scale: float = 1.0
    seed: int = 0
    device_ip: str = "10.0.0.2"
    resolver_ip: str = "10.0.0.1"

    def scaled_counts(self) -> Dict[str, int]:
        return {c: int(math.floor(n * self.scale * self.class_scale.get(c, 1.0) + 0.5)) for c, n in self.counts.items()}

    def validate(self) -> None:
        missing = [c for c in CLASSES if c not in self.counts]
        if missing:
            raise BadConfig(f"no count for classes {missing}")
        for c in CLASSES[:-1]:
            if c not in self.profiles:
                raise BadConfig(f"no profile for class {c}")
        if self.scale < 0 or any(v < 0 for v in self.class_scale.values()):
            raise BadConfig("scale factors must be >= 0")
        if any(n < 0 for n in self.counts.values()):
            raise BadConfig("counts must be >= 0")
        for name, w in self.mixture.items():
            if name not in self.profiles or w < 0:
                raise BadConfig(f"bad mixture entry {name}={w}")
        if abs(sum(self.mixture.values()) - 1.0) > 1e-9:
            raise BadConfig("impertinent mixture weights must sum to 1")
        for p in self.profiles.values():
            p.validate()
        if sum(self.scaled_counts().values()) > MAX_EVENTS:
            raise BadConfig(f"at most {MAX_EVENTS} streams fit the device port plan")

    @classmethod
    def from_kv(cls, kv: Mapping[str, str], scale: Optional[float] = None, seed: Optional[int] = None) -> "SynthConfig":
        """Read ``synth.*`` keys from a flat config.

        ``synth.count.<class>``, ``synth.scale.<class>``, ``synth.mix.<profile>``
        and ``synth.<profile>.<field>`` (a new profile name starts from a copy of
        the first background profile). ``scale``/``seed`` apply at top level.
        """
        cfg = cls()
        kinds = {f.name: f.type for f in fields(ClassProfile)}
        mixture = None
        for key, value in kv.items():
            if key == "scale":
                cfg.scale = coerce(value, float, key)
            elif key == "seed":
                cfg.seed = coerce(value, int, key)
            elif key == "device_ip":
                cfg.device_ip = value
            elif key.startswith("synth."):
                rest = key[len("synth.") :]
                if rest.startswith("count."):
                    cfg.counts[rest[6:]] = coerce(value, int, key)
                elif rest.startswith("scale."):
                    cfg.class_scale[rest[6:]] = coerce(value, float, key)
                elif rest.startswith("mix."):
                    mixture = {} if mixture is None else mixture
                    mixture[rest[4:]] = coerce(value, float, key)
                elif rest == "resolver_ip":
                    cfg.resolver_ip = value
                else:
                    name, _, attr = rest.rpartition(".")
                    if attr not in kinds or not name:
                        raise BadConfig(f"unknown synth key {key}")
                    base = cfg.profiles.get(name) or DEFAULT_PROFILES["impertinent/ads"]
                    kind = kinds[attr].replace("Optional[", "").rstrip("]")
                    typed = None if value.lower() == "none" else coerce(value, {"int": int, "float": float, "bool": bool}.get(kind, str), key)
                    cfg.profiles[name] = replace(base, **{attr: typed})
        if mixture is not None:
            cfg.mixture = mixture
        if scale is not None:
            cfg.scale = scale
        if seed is not None:
            cfg.seed = seed
        cfg.validate()
        return cfg


def draw_sizes(mu: float, sigma: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Rounded log-normal frame sizes clipped to [MIN_FRAME, MAX_FRAME]."""
    raw = np.exp(mu + sigma * rng.standard_normal(n)) if sigma > 0 else np.full(n, math.exp(mu))
    return np.clip(np.floor(raw + 0.5), MIN_FRAME, MAX_FRAME).astype(np.int64)


def draw_directions(profile: ClassProfile, n: int, rng: np.random.Generator) -> np.ndarray:
    """Markov chain of outgoing flags (1 = sent by the device)."""
    u = rng.random(n)
    out = np.empty(n, dtype=np.int64)
    state = u[0] < profile.p_first_out if n else True
    for i in range(n):
        if i:
            stay = profile.p_stay_out if state else profile.p_stay_in
            state = state if u[i] < stay else not state
        out[i] = state
    return out


def draw_gaps_us(profile: ClassProfile, n: int, rng: np.random.Generator) -> np.ndarray:
    """Inter-packet gaps in microseconds, at least 1 so timestamps strictly increase."""
    if profile.constant_gap is not None:
        g = np.full(n, profile.constant_gap * 1e6)
    else:
        g = rng.exponential(1e6 / profile.rate, size=n)
    return np.maximum(np.floor(g + 0.5), 1).astype(np.int64)


def draw_length(profile: ClassProfile, rng: np.random.Generator) -> int:
    return profile.min_length - 1 + int(rng.geometric(profile.length_p))


def host_ip(hostname: str, hosts: Sequence[str]) -> str:
    """Server address of a host: one distinct /32 per host in 100.64.0.0/10."""
    i = sorted(set(hosts)).index(hostname) + 1
    return f"100.64.{i // 256}.{i % 256}"


@dataclass
class Endpoints:
    device_ip: str
    server_ip: str
    resolver_ip: str
    tcp_port: int
    dns_port: int


def gen_stream(profile: ClassProfile, rng: np.random.Generator, start_us: int = BASE_TS * 1_000_000, ends: Optional[Endpoints] = None) -> Stream:
    """One labeled event: DNS lookup, ClientHello, then the data packets.

    The returned stream is the TCP flow; the DNS exchange rides along in
    ``extra["dns_packets"]``.
    """
    ends = ends or Endpoints("10.0.0.2", "100.64.0.1", "10.0.0.1", 20000, 40000)
    txid = int(rng.integers(0, 1 << 16))
    t = start_us
    dns = [
        make_packet(t, ends.device_ip, ends.resolver_ip, ends.dns_port, 53, "UDP", build_query(profile.hostname, txid)),
        make_packet(
            t + 2000, ends.resolver_ip, ends.device_ip, 53, ends.dns_port, "UDP",
            build_response(profile.hostname, [ends.server_ip], txid),
        ),
    ]
    t += 5000
    n = draw_length(profile, rng)
    outgoing = draw_directions(profile, n, rng)
    out_sizes = draw_sizes(profile.out_mu, profile.out_sigma, n, rng)
    in_sizes = draw_sizes(profile.in_mu, profile.in_sigma, n, rng)
    gaps = draw_gaps_us(profile, n, rng)

    hello = build_client_hello(None if profile.suppress_sni else profile.hostname, rng.bytes(32))
    seq = {True: int(rng.integers(0, 1 << 32)), False: int(rng.integers(0, 1 << 32))}
    pkts = [make_packet(t, ends.device_ip, ends.server_ip, ends.tcp_port, HTTPS, "TCP", hello, seq=seq[True], ack=seq[False])]
    seq[True] += len(hello)
    header = ETH_HDR + IPV4_HDR + TCP_HDR
    for i in range(n):
        t += int(gaps[i])
        up = bool(outgoing[i])
        size = int(out_sizes[i] if up else in_sizes[i])
        payload = bytes(size - header)  # zeros: never mistaken for a handshake record
        src, dst = (ends.device_ip, ends.server_ip) if up else (ends.server_ip, ends.device_ip)
        sp, dp = (ends.tcp_port, HTTPS) if up else (HTTPS, ends.tcp_port)
        pkts.append(make_packet(t, src, dst, sp, dp, "TCP", payload, seq=seq[up], ack=seq[not up], ident=i & 0xFFFF))
        seq[up] += len(payload)
    key = FlowKey.from_endpoints((ends.device_ip, ends.tcp_port), (ends.server_ip, HTTPS), "TCP")
    return Stream(
        key=key,
        device_ip=ends.device_ip,
        packets=pkts,
        host=profile.hostname,
        app_label=profile.app,
        activity_label=profile.activity,
        extra={"dns_packets": dns, "n_data": n},
    )


def class_file(cls_name: str) -> str:
    return cls_name.replace("/", "_") + ".pcap"


def gen_class(cfg: SynthConfig, cls_name: str, n: int, first_event: int = 0) -> Tuple[List[Stream], bytes]:
    """All streams of one class and the pcap holding them (packets in time order).

    Event ``first_event + i`` owns device ports 1024 + 2k and 1025 + 2k, so flow
    keys stay unique across every file of a dataset.
    """
    hosts = [p.hostname for p in cfg.profiles.values()]
    names = sorted(cfg.mixture)
    weights = np.array([cfg.mixture[k] for k in names])
    streams = []
    records = []
    for i in range(n):
        rng = substream(cfg.seed, f"synth/{cls_name}/{i}")
        if cls_name == "impertinent":
            profile = cfg.profiles[names[int(rng.choice(len(names), p=weights))]]
        else:
            profile = cfg.profiles[cls_name]
        start = (BASE_TS + 2 * i) * 1_000_000 + int(rng.integers(0, 1_000_000))
        k = first_event + i
        ends = Endpoints(cfg.device_ip, host_ip(profile.hostname, hosts), cfg.resolver_ip, 1024 + 2 * k, 1025 + 2 * k)
        s = gen_stream(profile, rng, start, ends)
        streams.append(s)
        records += s.extra["dns_packets"] + s.packets
    records.sort(key=lambda p: p.ts_us)  # stable, so same-time packets keep generation order
    return streams, write_pcap(records)


def gen_dataset(cfg: SynthConfig, out_dir: Optional[str] = None) -> Dict[str, object]:
    """Generate every class; optionally write ``<class>.pcap`` files and ``labels.jsonl``.

    Returns {"files": {name: bytes}, "labels": [...], "streams": {class: [...]}}.
    """
    cfg.validate()
    files: Dict[str, bytes] = {}
    labels: List[dict] = []
    streams: Dict[str, List[Stream]] = {}
    first = 0
    for cls_name, n in cfg.scaled_counts().items():
        if cls_name not in CLASSES:
            raise BadConfig(f"unknown class {cls_name}")
        ss, blob = gen_class(cfg, cls_name, n, first)
        first += n
        name = class_file(cls_name)
        files[name] = blob
        streams[cls_name] = ss
        for s in ss:
            labels.append({"pcap": name, "flow_key": str(s.key), "app": s.app_label, "activity": s.activity_label})
    files["labels.jsonl"] = "".join(json.dumps(r, sort_keys=True) + "\n" for r in labels).encode()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for name, blob in files.items():
            atomic_write_bytes(os.path.join(out_dir, name), blob)
    return {"files": files, "labels": labels, "streams": streams}


# ---------------------------------------------------------------- user populations

EVENTS: Tuple[str, ...] = tuple(e for e in VOCAB if e != OTHER)


@dataclass
class PopulationProfile:
    """Trait vocabularies, label marginals and a usage mixture per label combination.

    ``mixtures`` maps a tuple of labels (one per trait, in ``traits`` order) to
    weights over EVENTS.
    """

    traits: Dict[str, List[str]]
    marginals: Dict[str, List[float]]
    mixtures: Dict[Tuple[str, ...], List[float]]
    users: int = 100

    def validate(self) -> None:
        for t, labels in self.traits.items():
            m = self.marginals.get(t)
            if m is None or len(m) != len(labels) or abs(sum(m) - 1) > 1e-9 or min(m) < 0:
                raise BadConfig(f"bad marginals for trait {t}")
        for combo, w in self.mixtures.items():
            if len(w) != len(EVENTS) or abs(sum(w) - 1) > 1e-9 or min(w) < 0:
                raise BadConfig(f"mixture for {combo} must be {len(EVENTS)} non-negative weights summing to 1")
        for combo in self.combinations():
            if combo not in self.mixtures:
                raise BadConfig(f"no mixture for {combo}")

    def combinations(self) -> List[Tuple[str, ...]]:
        combos: List[Tuple[str, ...]] = [()]
        for labels in self.traits.values():
            combos = [c + (lab,) for c in combos for lab in labels]
        return combos


def _split_event(name: str) -> Tuple[str, Optional[str]]:
    app, _, act = name.partition("/")
    return app, act or None


def gen_users(population: PopulationProfile, streams_per_user: int, seed: int) -> Tuple[List[dict], Dict[str, Dict[str, str]]]:
    """Event log lines and per-user trait ground truth.

    Each user draws one label per trait from its marginal, then
    ``streams_per_user`` events from that label combination's mixture.
    """
    population.validate()
    events: List[dict] = []
    truth: Dict[str, Dict[str, str]] = {}
    trait_names = list(population.traits)
    for u in range(population.users):
        rng = substream(seed, f"users/{u}")
        user = f"user{u:05d}"
        labels = tuple(
            population.traits[t][int(rng.choice(len(population.traits[t]), p=population.marginals[t]))] for t in trait_names
        )
        truth[user] = dict(zip(trait_names, labels))
        draws = rng.choice(len(EVENTS), size=streams_per_user, p=population.mixtures[labels])
        ts = BASE_TS + np.cumsum(rng.integers(1, 3600, size=streams_per_user))
        for k, t in zip(draws, ts):
            app, act = _split_event(EVENTS[int(k)])
            events.append({"user": user, "ts": int(t), "app": app, "activity": act})
    return events, truth


def _normalize(w: Sequence[float]) -> List[float]:
    s = float(sum(w))
    return [float(x) / s for x in w]


# per-label usage tendencies over EVENTS; a combination averages its labels' rows
_TENDENCIES = {
    "gender": {
        "female": [3, 2, 1, 1, 4, 3, 1, 5],
        "male": [1, 1, 4, 3, 2, 1, 2, 5],
    },
    "age_group": {
        "under_25": [2, 3, 5, 3, 4, 4, 0.5, 5],
        "25_to_45": [2, 2, 2, 1, 3, 2, 3, 5],
        "over_45": [4, 1, 1, 0.5, 2, 1, 2, 5],
    },
    "profession": {
        "student": [1, 2, 6, 3, 4, 3, 0.5, 5],
        "engineer": [0.5, 0.5, 2, 1, 2, 1, 6, 5],
        "retired": [5, 4, 1, 0.5, 1, 2, 1, 5],
    },
}


def default_population(users: int = 300) -> PopulationProfile:
    traits = {t: list(v) for t, v in _TENDENCIES.items()}
    marginals = {t: [1.0 / len(v)] * len(v) for t, v in traits.items()}
    mixtures = {}
    pop = PopulationProfile(traits, marginals, {}, users)
    for combo in pop.combinations():
        rows = [_normalize(_TENDENCIES[t][lab]) for t, lab in zip(traits, combo)]
        mixtures[combo] = _normalize(np.mean(rows, axis=0))
    pop.mixtures = mixtures
    return pop


def population_traits(pop: PopulationProfile) -> Dict[str, List[str]]:
    return {t: list(v) for t, v in pop.traits.items()}
