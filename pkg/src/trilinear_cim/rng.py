"""Named random streams derived from one job seed."""

from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("weights", "inputs", "noise")


def stream(seed: int, name: str) -> np.random.Generator:
    """Generator keyed by (seed, name); adding a new name never shifts existing ones."""
    return np.random.default_rng([int(seed) % (1 << 64), zlib.crc32(name.encode())])
