"""Deterministic RNG stream derivation.

Every random draw in the package flows through a generator obtained here, so
a run is a pure function of its integer seeds.  Streams are separated with
SeedSequence spawn keys rather than seed arithmetic, which keeps independent
consumers (corpus noise, augmentation, batch shuffling, ...) statistically
decoupled even when they share a root seed.
"""

from __future__ import annotations

import numpy as np

_ENTROPY_MOD = 2**63


def seeded_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for the given root seed and stream key, stable across runs."""
    ss = np.random.SeedSequence(entropy=seed % _ENTROPY_MOD, spawn_key=tuple(stream))
    return np.random.default_rng(ss)


def spawn_seed(seed: int, *stream: int) -> int:
    """Derive a child integer seed from (seed, stream)."""
    ss = np.random.SeedSequence(entropy=seed % _ENTROPY_MOD, spawn_key=tuple(stream))
    return int(ss.generate_state(1, np.uint64)[0])
