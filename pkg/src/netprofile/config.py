"""Flat ``key = value`` configuration files and the run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Dict, Optional

from netprofile.errors import BadConfig


def parse_kv(text: str, source: str = "<config>") -> Dict[str, str]:
    """One ``key = value`` per line; ``#`` starts a comment; later keys win."""
    out: Dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise BadConfig(f"{source}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise BadConfig(f"{source}:{n}: empty key")
        out[key] = value
    return out


def read_kv(path: str) -> Dict[str, str]:
    try:
        with open(path) as fh:
            return parse_kv(fh.read(), path)
    except OSError as exc:
        raise BadConfig(f"cannot read config {path}: {exc.strerror}") from None


def coerce(value: str, kind, key: str = "?"):
    """Convert a config string to ``kind`` (bool, int, float or str)."""
    try:
        if kind is bool:
            low = value.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is int:
            return int(value, 0)
        if kind is float:
            return float(value)
    except ValueError:
        raise BadConfig(f"{key}: cannot parse {value!r} as {kind.__name__}") from None
    return value


@dataclass
class RunConfig:
    data_dir: str = "data"
    model_dir: str = "model"
    out_dir: str = "out"
    # preprocessing caps
    size_cap: int = 2048
    delay_cap: float = 1.0
    # recurrent ensemble
    n_batches: int = 2000
    batch_size: int = 50
    lr: float = 1e-3
    seed: int = 0
    tau: float = 0.5
    gate_depth: int = 1
    test_fraction: float = 0.2
    # baselines
    app_trees: int = 50
    app_depth: int = 15
    activity_trees: int = 20
    activity_depth: int = 10
    svm_lambda: float = 1e-3
    svm_epochs: int = 30
    # synthetic data and profiling
    scale: float = 1.0
    device_ip: str = "10.0.0.2"
    trait_config: Optional[str] = None
    nb_alpha: float = 1.0
    users: int = 300
    events_per_user: int = 200
    extra: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_kv(cls, kv: Dict[str, str]) -> "RunConfig":
        """Known keys fill fields; anything else (e.g. synth.*) is kept in ``extra``."""
        cfg = cls()
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        for key, value in kv.items():
            if key in types and key != "extra":
                kind = {"int": int, "float": float, "str": str}.get(
                    types[key].replace("Optional[", "").rstrip("]"), str
                )
                setattr(cfg, key, coerce(value, kind, key))
            else:
                cfg.extra[key] = value
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not 0 <= self.seed < 2**64:
            raise BadConfig("seed must be a 64-bit unsigned integer")
        if self.size_cap <= 0 or self.delay_cap <= 0:
            raise BadConfig("size_cap and delay_cap must be positive")
        if self.n_batches < 0 or self.batch_size <= 0:
            raise BadConfig("n_batches must be >= 0 and batch_size > 0")
        if not 0.0 < self.test_fraction < 1.0:
            raise BadConfig("test_fraction must be in (0, 1)")
        if self.gate_depth < 1:
            raise BadConfig("gate_depth must be >= 1")
        if self.scale < 0:
            raise BadConfig("scale must be >= 0")
        if self.nb_alpha <= 0:
            raise BadConfig("nb_alpha must be positive")
