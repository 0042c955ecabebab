"""Deterministic random streams.

Every stochastic step derives its generator from a master seed plus a
structured key (stream id, repetition, scenario index, ...), so results are
reproducible and independent of execution order across parallel workers.
"""

from __future__ import annotations

import numpy as np

# stream ids; keep stable, they are part of the reproducibility contract
STREAM_SCENARIO = 1
STREAM_MEASUREMENT = 2
STREAM_ANN = 3
STREAM_FAULT = 4


def seed_sequence(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(k) for k in key))


def rng(master_seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(seed_sequence(master_seed, *key))
