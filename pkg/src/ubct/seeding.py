"""Deterministic RNG streams.

All randomness flows through counter-based Philox generators keyed by a
hash of (master seed, stage labels). Stages therefore draw from disjoint,
order-independent streams: changing how one stage consumes randomness
never perturbs another.
"""

import hashlib

import numpy as np


def philox_key(master_seed, *labels):
    """128-bit Philox key derived from a master seed and stage labels."""
    h = hashlib.sha256()
    h.update(str(int(master_seed)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return np.frombuffer(h.digest()[:16], dtype=np.uint64)


def rng_from(master_seed, *labels):
    """A Generator on the substream named by ``labels``."""
    return np.random.Generator(np.random.Philox(key=philox_key(master_seed, *labels)))
