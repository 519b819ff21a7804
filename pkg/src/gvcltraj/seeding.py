"""Deterministic child seeds so any step can be replayed in isolation."""

import numpy as np


def child_seed(seed: int, *path: int) -> int:
    """63-bit seed derived from ``seed`` and an integer path."""
    return int(np.random.SeedSequence([int(seed), *map(int, path)]).generate_state(1, np.uint64)[0] >> 1)
