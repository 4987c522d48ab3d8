"""Deterministic RNG streams derived from one master seed.

Every random choice in the package flows from a single integer seed through
a named sub-stream, so perturbing e.g. the flow-sampling stream never shifts
triplet sampling or minibatch order. Stream names are hashed with crc32
(stable across processes and platforms, unlike ``hash``).
"""

from __future__ import annotations

import zlib

import numpy as np


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Return the named RNG sub-stream of ``seed``.

    ``extra`` integers select sub-sub-streams (e.g. one per route, one per
    repeat) without correlating with each other.
    """
    entropy = (int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode("utf-8")), *[int(x) for x in extra])
    return np.random.default_rng(np.random.SeedSequence(entropy))
