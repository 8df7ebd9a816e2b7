"""Counter-based, splittable random streams.

Every stream is a Philox generator keyed by ``(seed, *path)``.  Path
components may be ints or short string tags; a string is hashed with CRC32 so
that adding a new module tag never shifts the streams of existing ones.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _word(key: int | str) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise ValueError("stream keys must be non-negative")
    return int(key)


def stream(seed: int, *path: int | str) -> np.random.Generator:
    """Independent generator for ``seed`` and the given key path."""
    if not 0 <= seed <= _MASK64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    seq = np.random.SeedSequence(entropy=seed, spawn_key=tuple(_word(k) for k in path))
    return np.random.Generator(np.random.Philox(seq))


def substream(rng: np.random.Generator, *path: int | str) -> np.random.Generator:
    """Derive a child stream from an existing generator's seed sequence."""
    parent = rng.bit_generator.seed_seq
    seq = np.random.SeedSequence(
        entropy=parent.entropy,
        spawn_key=tuple(parent.spawn_key) + tuple(_word(k) for k in path),
    )
    return np.random.Generator(np.random.Philox(seq))
