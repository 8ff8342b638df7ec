"""
Infrastructure Module
出力永続化・乱数ストリーム
"""

from .output_writer import OutputWriter, RunManifest, sha256_file
from .seeding import spawn_streams, trajectory_rng, trajectory_seed_sequence

__all__ = [
    'OutputWriter',
    'RunManifest',
    'sha256_file',
    'trajectory_seed_sequence',
    'trajectory_rng',
    'spawn_streams',
]
