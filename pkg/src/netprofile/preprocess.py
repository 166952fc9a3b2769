"""Per-packet feature series and the exponentially pooled 128-entry form.

A normalized series is an ``(n, 3)`` float array of ``(sqrt(delay), sign, sqrt(size))``
rows; a pooled series is ``(128, 6)`` (max-pooled then mean-pooled components).
"""

from __future__ import annotations

import json
from typing import Iterable, Optional

import numpy as np

from netprofile.errors import BadLength, EmptyStream

SERIES_LEN = 2048
POOLED_LEN = 128
BLOCK = 16
FEATURES = 3

# (start, stop, window) over the clipped series; the first segment is kept as is
SEGMENTS = (
    (0, 32, 1),
    (32, 64, 2),
    (64, 128, 4),
    (128, 256, 8),
    (256, 512, 16),
    (512, 1024, 32),
    (1024, 2048, 64),
)

# scale block (0..7) of every pooled entry; blocks 0 and 1 are the unpooled first 32 packets
BLOCK_INDEX = np.repeat(np.arange(POOLED_LEN // BLOCK), BLOCK)

DEFAULT_SIZE_CAP = 2048
DEFAULT_DELAY_CAP = 1.0


def normalize(stream, size_cap: int = DEFAULT_SIZE_CAP, delay_cap: float = DEFAULT_DELAY_CAP) -> np.ndarray:
    """Map a stream's packets to rows ``(sqrt(delay), sign, sqrt(size))`` in [0, 1].

    Sizes and inter-arrival gaps saturate at their caps. The first packet has no
    predecessor, so its delay is 0. ``sign`` is 1 for packets sent by the device.
    """
    if delay_cap <= 0:
        raise ValueError("delay_cap must be positive")
    ts_us, outgoing, size = stream.timeline()
    if len(ts_us) == 0:
        raise EmptyStream(f"stream {stream.key} has no packets")
    gaps = np.zeros(len(ts_us), dtype=np.float64)
    gaps[1:] = np.diff(ts_us) / 1e6
    delay = np.minimum(np.maximum(gaps, 0.0), delay_cap) / delay_cap
    p = np.minimum(size, size_cap) / float(size_cap)
    return np.stack([np.sqrt(delay), outgoing.astype(np.float64), np.sqrt(p)], axis=1)


def clip_pad(series: np.ndarray, length: int = SERIES_LEN) -> np.ndarray:
    """Keep the first ``length`` rows, zero-padding at the tail if shorter."""
    series = np.asarray(series, dtype=np.float64)
    if len(series) >= length:
        return series[:length].copy()
    out = np.zeros((length,) + series.shape[1:], dtype=np.float64)
    out[: len(series)] = series
    return out


def exp_pool(series: np.ndarray) -> np.ndarray:
    """Pool a ``(..., 2048, 3)`` series into ``(..., 128, 6)``.

    Windows double along the series (1, 2, 4, ..., 64 entries). Each pooled
    entry is ``concat(max, mean)`` over its window; the 32 unpooled entries are
    ``concat(x[i], x[i-1])`` with a zero row before the first. Window sums run
    left to right so results are reproducible to the last bit.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.shape[-2:] != (SERIES_LEN, FEATURES):
        raise BadLength(f"expected (..., {SERIES_LEN}, {FEATURES}), got {x.shape}")
    lead = x.shape[:-2]
    out = np.empty(lead + (POOLED_LEN, 2 * FEATURES), dtype=np.float64)

    head = x[..., :32, :]
    out[..., :32, :FEATURES] = head
    out[..., 0, FEATURES:] = 0.0
    out[..., 1:32, FEATURES:] = head[..., :31, :]

    row = 32
    for start, stop, win in SEGMENTS[1:]:
        seg = x[..., start:stop, :].reshape(lead + ((stop - start) // win, win, FEATURES))
        n_out = seg.shape[-3]
        mx = seg[..., 0, :].copy()
        acc = seg[..., 0, :].copy()
        for k in range(1, win):
            np.maximum(mx, seg[..., k, :], out=mx)
            acc += seg[..., k, :]
        out[..., row : row + n_out, :FEATURES] = mx
        out[..., row : row + n_out, FEATURES:] = acc / win
        row += n_out
    return out


def featurize(stream, size_cap: int = DEFAULT_SIZE_CAP, delay_cap: float = DEFAULT_DELAY_CAP) -> np.ndarray:
    """normalize -> clip_pad -> exp_pool for a single stream."""
    return exp_pool(clip_pad(normalize(stream, size_cap, delay_cap)))


def featurize_many(streams: Iterable, size_cap: int = DEFAULT_SIZE_CAP, delay_cap: float = DEFAULT_DELAY_CAP) -> np.ndarray:
    rows = [clip_pad(normalize(s, size_cap, delay_cap)) for s in streams]
    if not rows:
        return np.zeros((0, POOLED_LEN, 2 * FEATURES))
    return exp_pool(np.stack(rows))


def feature_line(pooled: np.ndarray, label_app: Optional[str], label_act: Optional[str]) -> str:
    """One feature-dump JSON line; floats carry 9 significant digits."""
    rows = [[float(f"{v:.9g}") for v in entry] for entry in np.asarray(pooled)]
    return json.dumps({"label_app": label_app, "label_act": label_act, "pooled": rows})
