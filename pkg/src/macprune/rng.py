"""Seed derivation.

Every random stream in the package comes from ``numpy.random.SeedSequence``
feeding a PCG64 bit generator.  Child streams are addressed by a spawn key, so
the stream for ``(base_seed, *keys)`` never depends on how many other streams
were created or in what order.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "numpy-PCG64/SeedSequence(entropy=seed, spawn_key=keys)"

# Batch simulations draw traces in fixed-size chunks, one child stream per chunk.
CHUNK_SIZE = 4096


def seed_sequence(seed: int, *keys: int) -> np.random.SeedSequence:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the child stream ``keys`` of ``seed``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *keys)))


def derive_seed(seed: int, *keys: int) -> int:
    """Collapse a child stream to a plain 63-bit integer seed."""
    state = seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


# Stream identifiers, used as the first spawn-key element.
STREAM_LAYER = 1
STREAM_INPUTS = 2
STREAM_MASKS = 3
STREAM_NOISE = 4
STREAM_TRACES = 5
STREAM_TRAIN = 6
STREAM_SURROGATE = 7
