"""Mergeable per-direction packet-size statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

SERIES = ("full", "incoming", "outgoing")
FEATURE_NAMES: List[str] = [f"{s}.{f}" for s in SERIES for f in ("mean", "std", "min", "max", "n")]


@dataclass(frozen=True)
class SeriesStats:
    n: int = 0
    sum: float = 0
    sum_sq: float = 0
    min: Optional[float] = None
    max: Optional[float] = None

    @classmethod
    def of(cls, values) -> "SeriesStats":
        vals = [v.item() if hasattr(v, "item") else v for v in values]
        if not vals:
            return cls()
        return cls(len(vals), sum(vals), sum(v * v for v in vals), min(vals), max(vals))

    def merge(self, other: "SeriesStats") -> "SeriesStats":
        if self.n == 0:
            return other
        if other.n == 0:
            return self
        return SeriesStats(
            self.n + other.n,
            self.sum + other.sum,
            self.sum_sq + other.sum_sq,
            min(self.min, other.min),
            max(self.max, other.max),
        )

    @property
    def mean(self) -> float:
        return self.sum / self.n if self.n else 0.0

    @property
    def variance(self) -> float:
        """Population variance, clamped at 0 against cancellation."""
        if not self.n:
            return 0.0
        # integer sizes keep the numerator exact
        return max((self.n * self.sum_sq - self.sum * self.sum) / (self.n * self.n), 0.0)

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)


@dataclass(frozen=True)
class FlowStats:
    full: SeriesStats = SeriesStats()
    incoming: SeriesStats = SeriesStats()
    outgoing: SeriesStats = SeriesStats()


def compute_stats(stream) -> FlowStats:
    _, outgoing, size = stream.timeline()
    sizes = size.tolist()
    out_flags = outgoing.tolist()
    return FlowStats(
        full=SeriesStats.of(sizes),
        incoming=SeriesStats.of([s for s, o in zip(sizes, out_flags) if not o]),
        outgoing=SeriesStats.of([s for s, o in zip(sizes, out_flags) if o]),
    )


def merge_stats(a: FlowStats, b: FlowStats) -> FlowStats:
    """Statistics of the union of two streams' packets."""
    return FlowStats(a.full.merge(b.full), a.incoming.merge(b.incoming), a.outgoing.merge(b.outgoing))


def stats_to_features(s: FlowStats) -> np.ndarray:
    """15 features: (mean, std, min, max, n) for full, incoming, outgoing; zeros when empty."""
    out = []
    for part in (s.full, s.incoming, s.outgoing):
        if part.n:
            out += [part.mean, part.std, float(part.min), float(part.max), float(part.n)]
        else:
            out += [0.0] * 5
    return np.asarray(out, dtype=np.float64)
