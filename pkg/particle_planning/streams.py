"""
Counter-based, splittable random streams.

A StreamKey is a master seed plus a path of integer stream ids. Every
consumer derives its own child key and turns it into a Philox generator,
so the draws a particle, a time step or a sweep cell sees depend only on
its key and never on scheduling order.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

# Top-level stream roles, used as the first path element by the planners.
ROLE_TRANSITION = 0
ROLE_OBSERVATION = 1
ROLE_PARTICLES = 2
ROLE_ORACLE = 3
ROLE_SHARED = 4
ROLE_REPLICATION = 5
ROLE_SWEEP = 6
ROLE_SUITE = 7

# Particles are drawn in fixed-size chunks; chunk c of step t reads stream (t, c).
PARTICLE_CHUNK = 4096


@dataclass(frozen=True)
class StreamKey:
    """
    Immutable address of one random stream.

    Args:
        master_seed (int): experiment-wide seed (unsigned 64-bit)
        path (Tuple[int, ...]): stream ids below the master seed
    """

    master_seed: int
    path: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.master_seed < 0:
            raise ValueError(f"master seed must be non-negative, got {self.master_seed}")
        if any(i < 0 for i in self.path):
            raise ValueError(f"stream ids must be non-negative, got {self.path}")

    def child(self, *ids: int) -> "StreamKey":
        """Return the key one or more levels below this one."""
        return StreamKey(self.master_seed, self.path + tuple(int(i) for i in ids))

    def generator(self) -> np.random.Generator:
        """Fresh Philox generator positioned at the start of this stream."""
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


def chunked_draws(sampler, key: StreamKey, count: int) -> np.ndarray:
    """
    Draw `count` rows by calling `sampler(generator, size)` on fixed chunks.

    Chunk c reads from key.child(c), so row i always comes from the same
    stream position regardless of how many rows are requested in total
    beyond its chunk.
    """
    pieces = []
    for chunk_index, start in enumerate(range(0, count, PARTICLE_CHUNK)):
        size = min(PARTICLE_CHUNK, count - start)
        pieces.append(sampler(key.child(chunk_index).generator(), size))
    return np.concatenate(pieces, axis=0)
