"""Named, reproducible random substreams derived from one integer seed."""

import hashlib

import numpy as np


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    """Generator for component ``name`` (e.g. ``"forest/tree/17"``) under ``seed``.

    Streams for different names are statistically independent, and adding a new
    consumer never shifts the draws of an existing one.
    """
    seq = np.random.SeedSequence([int(seed) & (2**64 - 1), _name_key(name)])
    return np.random.Generator(np.random.PCG64(seq))
