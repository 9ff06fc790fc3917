"""Counter-based random streams.

Every random quantity is drawn from its own generator,
``default_rng(SeedSequence(master_seed, spawn_key=(purpose, m, arm, model)))``,
so results do not depend on evaluation order or on how work is split across
threads or processes.
"""

from __future__ import annotations

import numpy as np

# purpose tags (first spawn-key entry)
PARAMETERS = 0
BERNOULLI = 1
LATENT_Z = 2
REPLICATION = 3
PPC = 4
DATA = 5

# model tags
ADVERSE = 0
DEATH = 1


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def child_seed(seed: int, *keys: int) -> int:
    """Derived 63-bit integer seed (for APIs that need a plain integer)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(2, dtype=np.uint64)[0] >> np.uint64(1))
