"""
Deterministic Random Streams
軌跡ごとの乱数ストリーム導出

Trajectory k of a run with base seed s draws from
numpy.random.default_rng(numpy.random.SeedSequence([s, k])). SeedSequence
hashes the entropy words, so streams for neighbouring indices are
statistically independent and any implementation that reproduces the
SeedSequence algorithm reproduces the streams.
"""

from typing import List

import numpy as np


def trajectory_seed_sequence(base_seed: int, index: int) -> np.random.SeedSequence:
    if base_seed < 0 or index < 0:
        raise ValueError(f"seed and trajectory index must be non-negative, got ({base_seed}, {index})")
    return np.random.SeedSequence([int(base_seed), int(index)])


def trajectory_rng(base_seed: int, index: int) -> np.random.Generator:
    """軌跡 index 用の独立乱数生成器"""
    return np.random.default_rng(trajectory_seed_sequence(base_seed, index))


def spawn_streams(base_seed: int, count: int) -> List[np.random.Generator]:
    return [trajectory_rng(base_seed, k) for k in range(count)]
