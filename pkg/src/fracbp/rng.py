"""Seeded random streams.

All randomness goes through numpy's PCG64 bit generator seeded from a
``SeedSequence``.  A stream is identified by ``(seed, *keys)``: the keys are
used as the sequence's ``spawn_key``, so ``make_rng(s, 3)`` is the same
stream as ``SeedSequence(s).spawn(4)[3]``.  This makes batch-level
parallelism reproducible regardless of how batches are scheduled.
"""

from __future__ import annotations

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(seq))
