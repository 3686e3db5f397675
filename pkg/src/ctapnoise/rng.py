"""Deterministic derivation of independent random streams from a master seed.

A stream is identified by the master seed plus a tuple of keys (integers or
strings).  Keys are mapped to integers with CRC32 and used as the
``spawn_key`` of a :class:`numpy.random.SeedSequence`, so the same
``(seed, keys)`` always yields the same stream regardless of how many other
streams were drawn before it or in which worker.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("integer stream keys must be non-negative")
        return int(key)
    return zlib.crc32(str(key).encode("utf-8"))


def derive_rng(seed: int, *keys) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key_int(k) for k in keys))
    return np.random.default_rng(ss)
