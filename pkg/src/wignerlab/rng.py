"""Counter-based random streams for reproducible parallel Monte Carlo.

Every stochastic routine in the package receives a ``numpy.random.Generator``
built from a (master seed, path) key, where the path is a tuple of small
integers such as (subcommand tag, replicate index, epsilon index).  Streams
with distinct paths are statistically independent and any single replicate can
be re-derived in isolation, independently of thread scheduling.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["stream", "tag"]


def tag(name: str) -> int:
    """Stable 32-bit integer label for a subsystem name (e.g. ``"cavity"``)."""
    return zlib.crc32(name.encode("utf-8"))


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox generator keyed by ``(seed, *path)``.

    The same key always yields the same stream on every platform; different
    keys yield independent streams (SeedSequence hashing).
    """
    entropy = (int(seed),) + tuple(int(p) for p in path)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
