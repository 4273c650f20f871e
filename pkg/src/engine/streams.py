"""Per-trajectory random streams.

Every trajectory owns a Philox counter-based generator keyed by
(master_seed, trajectory_index), so its draws never depend on which worker
simulates it or on what other trajectories are simulated alongside it.
Uniforms are handed out from a per-row buffer that is refilled from the
row's own generator, which keeps the consumption order per trajectory fixed.
"""
from typing import Sequence

import numpy as np


def trajectory_generator(master_seed: int, trajectory_index: int) -> np.random.Generator:
    """Generator for one trajectory's stream."""
    seed_seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(trajectory_index),))
    return np.random.Generator(np.random.Philox(seed_seq))


class TrajectoryStreams:
    """Buffered uniform draws for a group of trajectories."""

    def __init__(self, master_seed: int, indices: Sequence[int], buffer_size: int = 128):
        """
        Args:
            master_seed: Seed shared by the whole ensemble
            indices: Trajectory indices, one row per index
            buffer_size: Uniforms pre-drawn per row between refills
        """
        self.indices = np.asarray(list(indices), dtype=np.int64)
        self.buffer_size = int(buffer_size)
        self._generators = [trajectory_generator(master_seed, i) for i in self.indices]
        self._buffer = np.empty((len(self._generators), self.buffer_size))
        for row, gen in enumerate(self._generators):
            self._buffer[row] = gen.random(self.buffer_size)
        self._position = np.zeros(len(self._generators), dtype=np.int64)

    def next(self, rows: np.ndarray) -> np.ndarray:
        """
        Next uniform in [0, 1) for each listed row.

        Args:
            rows: Distinct row numbers (not trajectory indices)

        Returns:
            One draw per row, in the order of rows
        """
        rows = np.asarray(rows, dtype=np.int64)
        exhausted = rows[self._position[rows] >= self.buffer_size]
        for row in exhausted:
            self._buffer[row] = self._generators[row].random(self.buffer_size)
            self._position[row] = 0
        draws = self._buffer[rows, self._position[rows]]
        self._position[rows] += 1
        return draws
