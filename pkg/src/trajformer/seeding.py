"""Named random streams derived from a single run seed.

Every source of randomness (init, shuffles, dropout, synthetic traffic)
pulls its own generator via `stream(seed, name, *indices)`, so that adding
a consumer never perturbs the draws of another and resumed runs can
re-derive any per-step stream.
"""

import zlib

import numpy as np


def stream(seed, name, *indices):
    """Return a fresh Generator for (seed, name, indices)."""
    key = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode("utf-8"))]
    key.extend(int(i) & 0xFFFFFFFF for i in indices)
    return np.random.default_rng(np.random.SeedSequence(key))
