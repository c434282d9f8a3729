"""Seeded random streams.

All randomness flows from ``numpy.random.Philox`` (a counter-based generator)
keyed by a :class:`numpy.random.SeedSequence`.  A stream is identified by
``(seed, *key)``; replicate chunks use ``(seed, stream, chunk_index)`` so that
results never depend on how chunks are scheduled across workers.
"""

from __future__ import annotations

import numpy as np

__all__ = ["make_rng", "stream", "as_rng"]


def stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def make_rng(seed: int) -> np.random.Generator:
    return stream(seed)


def as_rng(rng) -> np.random.Generator:
    """Accept a Generator or an integer seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise TypeError("an explicit seed or Generator is required")
    return make_rng(int(rng))
