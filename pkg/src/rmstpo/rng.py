"""Keyed random streams.

Every random draw in the package comes from a Philox generator whose
``SeedSequence`` is keyed by an integer seed plus a tuple of integer keys
(cell, replicate, purpose).  Streams with different keys never overlap, and
the stream for a given key does not depend on how work is scheduled.
"""

from __future__ import annotations

import zlib

import numpy as np

# purpose tags
DATA = 1
PERMUTE = 2
BOOTSTRAP = 3


def key_of(label: str) -> int:
    """Stable 32-bit integer for a string label."""
    return zlib.crc32(label.encode("utf-8"))


def stream(seed: int, *keys: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *keys: int) -> int:
    """Derive a child integer seed (63 bits) from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    hi, lo = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 31) ^ int(lo)


def fresh_seed() -> int:
    return int(np.random.SeedSequence().generate_state(1, dtype=np.uint32)[0])
