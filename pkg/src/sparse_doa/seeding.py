"""Seed derivation.

Every random stream in the package comes from one top-level integer seed plus
a tuple of derivation labels, e.g. ``derive_rng(seed, "dataset", snr_idx, p, l)``.
Strings are hashed with CRC32 so the mapping is stable across processes and
Python versions. Streams are PCG64, so a task's draws do not depend on how
many tasks run before it or on how many workers execute them.
"""

import zlib

import numpy as np


def _key(label):
    if isinstance(label, (int, np.integer)):
        if label < 0:
            raise ValueError("derivation labels must be non-negative")
        return int(label)
    return zlib.crc32(str(label).encode("utf-8"))


def seed_sequence(seed, *labels):
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(_key(x) for x in labels))


def derive_rng(seed, *labels):
    """Independent ``np.random.Generator`` for ``seed || labels``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *labels)))


def derive_int(seed, *labels):
    """A 63-bit integer seed for ``seed || labels`` (for APIs taking ints)."""
    return int(seed_sequence(seed, *labels).generate_state(1, dtype=np.uint64)[0]) >> 1


def as_rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return np.random.Generator(np.random.PCG64(seed_or_rng))
