"""Seeded random streams.

All randomness flows through numpy's counter-based Philox generator keyed by a
``numpy.random.SeedSequence`` built from the master seed plus a tuple of
integer stream identifiers. Identical (seed, stream) pairs give identical
draws regardless of the order in which other streams are consumed.
"""

from __future__ import annotations

import zlib

import numpy as np

DEFAULT_SEED = 20160101


def _word(x) -> int:
    if isinstance(x, str):
        return zlib.crc32(x.encode("utf-8"))
    return int(x)


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Return an independent Philox generator for ``(seed, *stream)``.

    Stream components may be non-negative ints or strings (hashed with CRC32).
    """
    if seed < 0 or seed >= 2**64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    words = [seed & 0xFFFFFFFF, seed >> 32] + [_word(s) for s in stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def derive_seed(seed: int, *stream) -> int:
    """Deterministic 64-bit child seed."""
    words = [seed & 0xFFFFFFFF, seed >> 32] + [_word(s) for s in stream]
    return int(np.random.SeedSequence(words).generate_state(1, dtype=np.uint64)[0])
