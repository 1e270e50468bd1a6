"""Seeded random streams.

Every sampler in the package draws from a Philox counter-based generator
(64-bit seed, fixed key schedule) so that results depend only on the seed and
on the order of draws, never on global state.
"""

import numpy as np

SEED_MASK = (1 << 64) - 1


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Return an independent generator for ``seed`` and an optional stream path.

    ``make_rng(7, u)`` and ``make_rng(7, v)`` give unrelated streams for two
    nodes without having to thread a generator through the call graph.
    """
    seq = np.random.SeedSequence([int(seed) & SEED_MASK, *(int(s) for s in stream)])
    return np.random.Generator(np.random.Philox(seq))
