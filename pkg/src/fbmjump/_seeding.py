"""Deterministic seed fan-out shared by every sampler.

Sample ``i`` of a batch with base seed ``s`` owns the seed ``s + i``; each
such seed is split into independent named streams so that, for example, the
Gaussian noise of a path does not depend on how many jumps it drew.
"""

from __future__ import annotations

import numpy as np

NOISE = 0
JUMPS = 1
AUX = 2


def stream(seed: int, kind: int = NOISE) -> np.random.Generator:
    if int(seed) < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(kind,)))
