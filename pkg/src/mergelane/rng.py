"""Named, seed-derived random substreams.

Every consumer of randomness gets its own stream keyed by a purpose string, so
adding draws in one place (e.g. driver imperfection under a different policy)
never shifts the numbers seen anywhere else.
"""

from __future__ import annotations

import random
import zlib

import numpy as np


def replicate_seed(master_seed: int, replicate_index: int) -> int:
    """Stable 63-bit seed for one replication; independent of policy."""
    state = np.random.SeedSequence([int(master_seed), int(replicate_index)]).generate_state(2, np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


def _purpose_key(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


class RandomStreams:
    def __init__(self, seed: int):
        self.seed = int(seed)

    def _sequence(self, purpose: str, *extra: int) -> np.random.SeedSequence:
        return np.random.SeedSequence(self.seed, spawn_key=(_purpose_key(purpose), *extra))

    def generator(self, purpose: str, *extra: int) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self._sequence(purpose, *extra)))

    def py_random(self, purpose: str, *extra: int) -> random.Random:
        """Stdlib generator for hot scalar loops (much cheaper per draw)."""
        state = self._sequence(purpose, *extra).generate_state(4, np.uint32)
        return random.Random(int.from_bytes(state.tobytes(), "little"))

    def __repr__(self) -> str:
        return f"RandomStreams(seed={self.seed})"
