"""
Reproducible random streams.

All randomness in cvlab flows through generators built here. A stream is
identified by ``(seed, tag, index)``:

- ``seed``  a non-negative master integer,
- ``tag``   a purpose label such as ``"vfold"`` or ``"dataset"``,
- ``index`` a counter (replicate number, repetition, split index...).

The triple is turned into a ``numpy.random.SeedSequence`` whose spawn key is
``(crc32(tag), index)`` and fed to the counter-based Philox4x64-10 bit
generator. CRC32 and SeedSequence hashing are platform independent, so a
given triple yields the same draws on every machine, whatever the number of
worker threads.
"""

import zlib
from typing import Tuple

import numpy as np

RNG_ALGORITHM = "Philox4x64-10 keyed by SeedSequence(seed, spawn_key=(crc32(tag), index))"

_SEED_MASK = (1 << 63) - 1


def _spawn_key(tag: str, index: int) -> Tuple[int, int]:
    if index < 0:
        raise ValueError(f"stream index must be non-negative, got {index}")
    return zlib.crc32(tag.encode("utf-8")), int(index)


def seed_sequence(seed: int, tag: str, index: int = 0) -> np.random.SeedSequence:
    """Seed sequence for the stream ``(seed, tag, index)``."""
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=_spawn_key(tag, index))


def make_rng(seed: int, tag: str, index: int = 0) -> np.random.Generator:
    """Philox generator for the stream ``(seed, tag, index)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(seed, tag, index)))


def derive_seed(seed: int, tag: str, index: int = 0) -> int:
    """
    Derive a child master seed.

    Used when a component that takes a plain integer seed (a split builder, a
    randomized rule) must receive an independent stream.
    """
    words = seed_sequence(seed, tag, index).generate_state(2, dtype=np.uint32)
    return ((int(words[0]) << 32) | int(words[1])) & _SEED_MASK
