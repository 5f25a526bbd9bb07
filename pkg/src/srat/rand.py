"""Deterministic random stream derivation.

All randomness in the package flows through Philox, a counter-based
generator, keyed by small integer tuples. Two processes that derive a
stream from the same key produce bit-identical draws, which is what makes
repeated runs reproduce checkpoints exactly and lets Monte Carlo sampling
shard deterministically.
"""

import numpy as np

from srat.errors import DomainError


def derive_rng(*key: int) -> np.random.Generator:
    """Return a Generator on a Philox stream addressed by ``key``.

    Keys are tuples of non-negative integers, e.g. ``(seed, stream_tag,
    epoch, batch)``. Distinct keys give statistically independent streams.
    """
    if not key:
        raise DomainError("derive_rng requires at least one key component")
    parts = []
    for k in key:
        k = int(k)
        if k < 0:
            raise DomainError(f"rng key components must be non-negative, got {k}")
        parts.append(k)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(parts)))
