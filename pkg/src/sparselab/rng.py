"""Seeded, purpose-separated random streams.

Every source of randomness in a run is one of three named streams
(weight init, epoch shuffling, random pruning scores), each derived from
the experiment seed through an independent PCG64 substream. Identical
(seed, stream) pairs produce bit-identical sequences on every platform,
which is what makes whole runs replayable.
"""

from __future__ import annotations

import numpy as np

STREAMS = ("init", "shuffle", "prune_random")


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """Return the generator for one named substream of `seed`."""
    if stream not in STREAMS:
        raise ValueError(f"unknown rng stream {stream!r}, expected one of {STREAMS}")
    key = STREAMS.index(stream)
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(seq))


def rng_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's position."""
    return rng.bit_generator.state


def restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.Generator(np.random.PCG64())
    rng.bit_generator.state = state
    return rng
