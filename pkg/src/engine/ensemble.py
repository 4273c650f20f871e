"""Block-structured trajectory ensembles.

Trajectory indices are cut into fixed-size blocks. A block is simulated in
one vectorised pass and reduced to an EnsembleAccumulator; blocks are merged
in block order, so the totals do not depend on how many workers ran them.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from functools import reduce
from multiprocessing import Pool
from typing import List, Optional

import numpy as np

from src.engine.streams import TrajectoryStreams
from src.engine.trajectory import (
    GRID_EPS,
    check_step_size,
    expand_segments,
    initial_amplitudes,
    run_event_driven,
    run_fixed_step,
)
from src.models import CavityParams, SimConfig, Stepping

logger = logging.getLogger(__name__)

EVENT_BUFFER = 128
FIXED_STEP_BUFFER = 512

COUNT_FIELDS = ("emitted_counts", "detected_counts", "emitted_sq", "detected_sq")
MOMENT_FIELDS = ("sum_alpha", "sum_alpha_sq", "sum_alpha_quad", "sum_re_sq", "sum_im_sq")


@dataclass
class EnsembleAccumulator:
    """
    Binned statistics over a set of trajectories.

    Bin b covers [b*bin_width, (b+1)*bin_width). Event counts are totals over
    the bin; amplitude moments are taken at the bin start. The *_sq count
    fields hold sums over trajectories of the squared per-trajectory count,
    which gives the single-shot spread of the counting signal.
    """
    bin_width: float
    n_traj: int
    conditional: bool
    emitted_counts: np.ndarray
    detected_counts: np.ndarray
    emitted_sq: np.ndarray
    detected_sq: np.ndarray
    sum_alpha: np.ndarray
    sum_alpha_sq: np.ndarray
    sum_alpha_quad: np.ndarray
    sum_re_sq: np.ndarray
    sum_im_sq: np.ndarray

    @classmethod
    def empty(cls, n_bins: int, bin_width: float, conditional: bool = False) -> "EnsembleAccumulator":
        counts = {name: np.zeros(n_bins, dtype=np.int64) for name in COUNT_FIELDS}
        moments = {name: np.zeros(n_bins) for name in MOMENT_FIELDS}
        moments["sum_alpha"] = np.zeros(n_bins, dtype=np.complex128)
        return cls(bin_width=bin_width, n_traj=0, conditional=conditional, **counts, **moments)

    @property
    def n_bins(self) -> int:
        return self.emitted_counts.shape[0]

    @property
    def bin_starts(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.bin_width

    def bin_of(self, t: float) -> int:
        """Bin containing time t (the last bin for t at or past the end)."""
        if self.n_bins == 0:
            raise ValueError("accumulator has no bins")
        return int(min(max(math.floor(t / self.bin_width + GRID_EPS), 0), self.n_bins - 1))

    def merge(self, other: "EnsembleAccumulator") -> "EnsembleAccumulator":
        """Statistics of the concatenated ensembles (self first)."""
        if self.n_bins != other.n_bins or not math.isclose(self.bin_width, other.bin_width):
            raise ValueError("cannot merge accumulators on different bin grids")
        if self.conditional != other.conditional:
            raise ValueError("cannot merge conditional with unconditional ensembles")
        sums = {name: getattr(self, name) + getattr(other, name) for name in COUNT_FIELDS + MOMENT_FIELDS}
        return EnsembleAccumulator(
            bin_width=self.bin_width,
            n_traj=self.n_traj + other.n_traj,
            conditional=self.conditional,
            **sums,
        )


class BlockAccumulator:
    """Engine observer reducing one block of trajectories to bin statistics."""

    def __init__(self, n_rows: int, n_bins: int, bin_width: float, kappa: float):
        self.n_rows = n_rows
        self.n_points = n_bins
        self.spacing = bin_width
        self.kappa = kappa
        self._point_sums = EnsembleAccumulator.empty(n_bins, bin_width)
        self._event_rows: List[np.ndarray] = []
        self._event_times: List[np.ndarray] = []
        self._event_detected: List[np.ndarray] = []

    def add_point(self, grid_index: int, alpha: np.ndarray):
        if grid_index >= self.n_points:
            return
        sums = self._point_sums
        intensity = np.abs(alpha) ** 2
        sums.sum_alpha[grid_index] += alpha.sum()
        sums.sum_alpha_sq[grid_index] += intensity.sum()
        sums.sum_alpha_quad[grid_index] += (intensity ** 2).sum()
        sums.sum_re_sq[grid_index] += (alpha.real ** 2).sum()
        sums.sum_im_sq[grid_index] += (alpha.imag ** 2).sum()

    def _binned(self, grid: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return np.bincount(grid, weights=weights, minlength=self.n_points)

    def add_segments(self, rows, t_start, alpha_start, t_end=None):
        _, grid, alpha = expand_segments(t_start, alpha_start, t_end, self.spacing, self.n_points, self.kappa)
        if not grid.size:
            return
        sums = self._point_sums
        intensity = np.abs(alpha) ** 2
        sums.sum_alpha += self._binned(grid, alpha.real) + 1j * self._binned(grid, alpha.imag)
        sums.sum_alpha_sq += self._binned(grid, intensity)
        sums.sum_alpha_quad += self._binned(grid, intensity ** 2)
        sums.sum_re_sq += self._binned(grid, alpha.real ** 2)
        sums.sum_im_sq += self._binned(grid, alpha.imag ** 2)

    def add_events(self, rows, times, detected):
        self._event_rows.append(np.asarray(rows, dtype=np.int64))
        self._event_times.append(np.asarray(times, dtype=float))
        self._event_detected.append(np.asarray(detected, dtype=bool))

    def _count(self, rows: np.ndarray, bins: np.ndarray):
        counts = np.bincount(bins, minlength=self.n_points).astype(np.int64)
        keys, per_traj = np.unique(rows * self.n_points + bins, return_counts=True)
        squares = np.bincount(keys % self.n_points, weights=per_traj.astype(float) ** 2,
                              minlength=self.n_points)
        return counts, np.rint(squares).astype(np.int64)

    def finalize(self, conditional: bool) -> EnsembleAccumulator:
        result = self._point_sums
        if self._event_rows and self.n_points:
            rows = np.concatenate(self._event_rows)
            times = np.concatenate(self._event_times)
            detected = np.concatenate(self._event_detected)
            bins = np.clip(np.floor(times / self.spacing + GRID_EPS).astype(np.int64), 0, self.n_points - 1)
            result.emitted_counts, result.emitted_sq = self._count(rows, bins)
            result.detected_counts, result.detected_sq = self._count(rows[detected], bins[detected])
        result.n_traj = self.n_rows
        result.conditional = conditional
        return result


def simulate_block(params: CavityParams, config: SimConfig, block: int,
                   conditional: bool = False) -> EnsembleAccumulator:
    """
    Simulate one block of trajectory indices and reduce it to bin statistics.

    Args:
        params: Cavity parameters
        config: Simulation settings (fixes the block partition)
        block: Block number
        conditional: Start every trajectory from a detection plus feedback at t=0

    Returns:
        EnsembleAccumulator of the block
    """
    indices = config.block_indices(block)
    buffer = EVENT_BUFFER if config.stepping is Stepping.EVENT_DRIVEN else FIXED_STEP_BUFFER
    streams = TrajectoryStreams(config.master_seed, indices, buffer_size=buffer)
    observer = BlockAccumulator(len(indices), config.n_bins, config.bin_width, params.kappa)
    alpha0 = initial_amplitudes(params, len(indices), conditional)
    if config.stepping is Stepping.EVENT_DRIVEN:
        run_event_driven(alpha0, params, config.t_max, streams, observer)
    else:
        run_fixed_step(alpha0, params, config, streams, observer)
    return observer.finalize(conditional)


def _block_task(args) -> EnsembleAccumulator:
    return simulate_block(*args)


@dataclass
class BlockedEnsemble:
    """Per-block accumulators of one ensemble, in block order."""
    blocks: List[EnsembleAccumulator]
    _merged: Optional[EnsembleAccumulator] = field(default=None, repr=False)

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    @property
    def conditional(self) -> bool:
        return self.blocks[0].conditional

    def merged(self) -> EnsembleAccumulator:
        if self._merged is None:
            self._merged = reduce(EnsembleAccumulator.merge, self.blocks)
        return self._merged

    def stacked(self, name: str) -> np.ndarray:
        """One row per block of the named per-bin field."""
        return np.stack([getattr(b, name) for b in self.blocks])

    @property
    def block_sizes(self) -> np.ndarray:
        return np.array([b.n_traj for b in self.blocks], dtype=float)


def run_ensemble(params: CavityParams, config: SimConfig, conditional: bool = False,
                 workers: int = 1) -> BlockedEnsemble:
    """
    Simulate config.n_traj trajectories, optionally on a process pool.

    Args:
        params: Cavity parameters
        config: Simulation settings
        conditional: Condition every trajectory on a detection at t=0
        workers: Number of worker processes

    Returns:
        BlockedEnsemble whose merge is independent of workers
    """
    check_step_size(params, config)
    tasks = [(params, config, block, conditional) for block in range(config.n_blocks)]
    start = time.time()
    workers = max(1, min(int(workers), len(tasks)))
    if workers > 1:
        with Pool(processes=workers) as pool:
            blocks = pool.map(_block_task, tasks)
    else:
        blocks = [_block_task(task) for task in tasks]
    elapsed = time.time() - start
    logger.info(
        f"Simulated {config.n_traj} {'conditional ' if conditional else ''}trajectories "
        f"(phi={params.phi:.4f}, {config.stepping.value}) in {len(tasks)} blocks "
        f"on {workers} worker(s) in {elapsed:.2f}s"
    )
    return BlockedEnsemble(blocks=blocks)
