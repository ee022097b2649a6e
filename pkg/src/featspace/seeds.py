"""Deterministic seed derivation for independent RNG streams.

Every stage and every per-sample attack draws from its own stream derived
from the master seed plus integer tags, so parallel and serial execution
orders produce identical results.
"""

from __future__ import annotations

import numpy as np

# Stage tags; per-sample streams append the sample index after the tag.
SPLIT = 1
LIBRARY = 2
TRAIN_ORIGINAL = 3
TRAIN_SEC_SVM = 4
TRAIN_FEATURE_SELECT = 5
TRAIN_ROBUST = 6
ATTACK_EVADEDROID = 7
ATTACK_TRANSFER = 8


def seed_for(master_seed: int, *tags: int) -> int:
    """A 63-bit seed unique to (master_seed, tags)."""
    ss = np.random.SeedSequence([int(master_seed), *[int(t) for t in tags]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


def rng_for(master_seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(seed_for(master_seed, *tags))
