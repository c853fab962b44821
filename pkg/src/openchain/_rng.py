"""Seed and generator plumbing shared by simulation and protocols."""

from __future__ import annotations

import numpy as np

GENERATOR_NAME = "pcg64"

_U64 = 1 << 64


def check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _U64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return seed


def as_bit_generator(rng) -> np.random.BitGenerator:
    """Accept an int seed, a BitGenerator, or a Generator; return a BitGenerator."""
    if isinstance(rng, np.random.Generator):
        return rng.bit_generator
    if isinstance(rng, np.random.BitGenerator):
        return rng
    return np.random.PCG64(check_seed(rng))


def derive_seed(base_seed: int, index: int) -> int:
    """Stable 64-bit child seed for sweep point ``index`` (SeedSequence mix)."""
    state = np.random.SeedSequence([check_seed(base_seed), int(index)]).generate_state(2)
    return int(state[0]) | (int(state[1]) << 32)
