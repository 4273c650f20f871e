"""Quantum-jump trajectories of a coherent cavity field under photon-detection feedback.

A coherent state stays coherent under the no-jump evolution, under an
emission and under a displacement, so one complex amplitude per trajectory
describes the whole cavity state.
"""
import cmath
import logging
import math
from typing import List, Optional

import numpy as np

from config import MAX_EVENT_DRIVEN_PHOTONS, MAX_EVENT_ROUNDS, MAX_FIXED_STEP_DT
from src.engine.streams import TrajectoryStreams
from src.models import (
    CavityParams,
    CoherentAmplitude,
    EmissionEvent,
    SimConfig,
    Stepping,
    TrajectoryRecord,
)

logger = logging.getLogger(__name__)

class RunawayTrajectoryError(RuntimeError):
    """An event-driven trajectory outgrew the photon or round limit before t_max."""


# Slack, in grid units, when mapping continuous times onto a sampling grid
GRID_EPS = 1e-9


def _require_kappa(kappa: float):
    if not kappa > 0:
        raise ValueError(f"kappa must be positive, got {kappa}")


def steady_state_alpha(params: CavityParams) -> CoherentAmplitude:
    """Stationary amplitude (omega / kappa) e^{-i phi} of the driven, undetected cavity."""
    _require_kappa(params.kappa)
    return (params.omega / params.kappa) * cmath.exp(-1j * params.phi)


def propagate_no_jump(alpha0: CoherentAmplitude, params: CavityParams, t: float) -> CoherentAmplitude:
    """
    Amplitude after a duration t without photon emission.

    Args:
        alpha0: Amplitude at the start of the interval
        params: Cavity parameters (omega is the drive during the interval)
        t: Duration, non-negative

    Returns:
        e^{-kappa t/2} alpha0 + (omega/kappa)(1 - e^{-kappa t/2}) e^{-i phi}
    """
    _require_kappa(params.kappa)
    if t < 0:
        raise ValueError(f"duration must be non-negative, got {t}")
    half = -0.5 * params.kappa * t
    return math.exp(half) * alpha0 + (-math.expm1(half)) * steady_state_alpha(params)


def no_emission_probability(alpha: CoherentAmplitude, kappa: float, dt: float) -> float:
    """Probability exp[-|alpha|^2 (1 - e^{-kappa dt})] that no photon leaves within dt."""
    _require_kappa(kappa)
    if dt < 0:
        raise ValueError(f"dt must be non-negative, got {dt}")
    return math.exp(-abs(alpha) ** 2 * -math.expm1(-kappa * dt))


def apply_emission(alpha: CoherentAmplitude, detected: bool, beta: complex) -> CoherentAmplitude:
    """An undetected emission leaves alpha alone; a detected one triggers the displacement beta."""
    return alpha + beta if detected else alpha


def sample_waiting_time(alpha0: CoherentAmplitude, kappa: float, u: float) -> Optional[float]:
    """
    Invert the survival function of a freely decaying cavity.

    Args:
        alpha0: Amplitude at the start of the wait (drive off)
        kappa: Decay rate
        u: Uniform draw in (0, 1)

    Returns:
        Time t* with survival(t*) = u, or None when the cavity never emits
    """
    _require_kappa(kappa)
    if not 0.0 < u < 1.0:
        raise ValueError(f"u must lie in (0, 1), got {u}")
    mean_photons = abs(alpha0) ** 2
    if mean_photons == 0.0 or u <= math.exp(-mean_photons):
        return None
    return -math.log1p(math.log(u) / mean_photons) / kappa


def waiting_times(mean_photons: np.ndarray, kappa: float, u: np.ndarray) -> np.ndarray:
    """Vectorised sample_waiting_time; inf marks 'no emission ever'."""
    with np.errstate(divide="ignore", invalid="ignore"):
        never = u <= np.exp(-mean_photons)
        t = -np.log1p(np.log(u) / mean_photons) / kappa
    return np.where(never, np.inf, t)


class AmplitudeSampler:
    """Per-trajectory amplitude samples on a fixed time grid."""

    def __init__(self, n_rows: int, n_points: int, spacing: float, kappa: float):
        self.spacing = spacing
        self.kappa = kappa
        self.n_points = n_points
        self.samples = np.zeros((n_rows, n_points), dtype=np.complex128)
        self.event_rows: List[np.ndarray] = []
        self.event_times: List[np.ndarray] = []
        self.event_detected: List[np.ndarray] = []

    def add_point(self, grid_index: int, alpha: np.ndarray):
        if grid_index < self.n_points:
            self.samples[:, grid_index] = alpha

    def add_segments(self, rows, t_start, alpha_start, t_end=None):
        owner, grid, values = expand_segments(t_start, alpha_start, t_end, self.spacing, self.n_points, self.kappa)
        if grid.size:
            self.samples[np.asarray(rows)[owner], grid] = values

    def add_events(self, rows, times, detected):
        self.event_rows.append(np.asarray(rows))
        self.event_times.append(np.asarray(times, dtype=float))
        self.event_detected.append(np.asarray(detected, dtype=bool))

    def events_for_row(self, row: int):
        if not self.event_rows:
            return np.empty(0), np.empty(0, dtype=bool)
        rows = np.concatenate(self.event_rows)
        times = np.concatenate(self.event_times)
        detected = np.concatenate(self.event_detected)
        mask = rows == row
        order = np.argsort(times[mask], kind="stable")
        return times[mask][order], detected[mask][order]


def segment_grid_range(t_start, t_end, spacing: float, n_points: int):
    """
    Grid indices [lo, hi) covered by half-open segments [t_start, t_end).

    A missing t_end means the segment runs to the end of the grid.
    """
    lo = np.ceil(np.asarray(t_start) / spacing - GRID_EPS).astype(np.int64)
    if t_end is None:
        hi = np.full_like(lo, n_points)
    else:
        hi = np.ceil(np.asarray(t_end) / spacing - GRID_EPS).astype(np.int64)
    return np.clip(lo, 0, n_points), np.clip(hi, 0, n_points)


def expand_segments(t_start, alpha_start, t_end, spacing: float, n_points: int, kappa: float):
    """
    Freely decaying segments evaluated on the grid points they cover.

    Returns:
        (owner, grid, values): owner indexes the input segments, grid the
        covered points and values the amplitude alpha_start e^{-kappa (t - t_start)/2} there
    """
    t_start = np.asarray(t_start, dtype=float)
    lo, hi = segment_grid_range(t_start, t_end, spacing, n_points)
    lengths = np.maximum(hi - lo, 0)
    owner = np.repeat(np.arange(lengths.size), lengths)
    offsets = np.arange(owner.size) - np.repeat(np.cumsum(lengths) - lengths, lengths)
    grid = lo[owner] + offsets
    elapsed = grid * spacing - t_start[owner]
    values = np.asarray(alpha_start, dtype=np.complex128)[owner] * np.exp(-0.5 * kappa * elapsed)
    return owner, grid, values


def check_step_size(params: CavityParams, config: SimConfig):
    if config.stepping is Stepping.FIXED_STEP and config.dt * params.kappa > MAX_FIXED_STEP_DT * (1 + 1e-12):
        raise ValueError(
            f"fixed_step needs dt <= {MAX_FIXED_STEP_DT}/kappa, got dt*kappa={config.dt * params.kappa}"
        )
    if config.stepping is Stepping.EVENT_DRIVEN and config.measurement_drive and params.omega != 0:
        raise ValueError("event_driven stepping cannot simulate a driven cavity")


def run_event_driven(alpha: np.ndarray, params: CavityParams, t_max: float,
                     streams: TrajectoryStreams, observer):
    """
    Advance all rows from t=0 to t_max by sampling emission times directly.

    Each round consumes exactly two uniforms per active row: the waiting-time
    draw and the detection draw.

    Raises:
        RunawayTrajectoryError: When an active row's mean photon number passes
            MAX_EVENT_DRIVEN_PHOTONS or the run needs more than MAX_EVENT_ROUNDS rounds.
            Feedback that keeps raising the emission rate makes it diverge in continuous time;
            fixed_step stepping caps it at one emission per step.
    """
    kappa, eta, beta = params.kappa, params.eta, params.beta
    alpha = np.array(alpha, dtype=np.complex128)
    t = np.zeros(alpha.shape[0])
    active = np.arange(alpha.shape[0])
    rounds = 0
    while active.size:
        u = streams.next(active)
        v = streams.next(active)
        a_start = alpha[active]
        t_start = t[active]
        wait = waiting_times(np.abs(a_start) ** 2, kappa, u)
        t_event = t_start + wait
        emits = t_event < t_max

        done = ~emits
        if done.any():
            observer.add_segments(active[done], t_start[done], a_start[done])
        if not emits.any():
            break

        rows = active[emits]
        t_emit = t_event[emits]
        observer.add_segments(rows, t_start[emits], a_start[emits], t_emit)
        detected = v[emits] < eta
        decayed = a_start[emits] * np.exp(-0.5 * kappa * wait[emits])
        alpha[rows] = np.where(detected, decayed + beta, decayed)
        t[rows] = t_emit
        observer.add_events(rows, t_emit, detected)
        active = rows
        rounds += 1
        _check_runaway(alpha[rows], t_emit, rounds)
    logger.debug(f"Event-driven run finished after {rounds} emission rounds")
    return alpha


def _check_runaway(alpha: np.ndarray, t: np.ndarray, rounds: int):
    photons = np.abs(alpha) ** 2
    worst = int(np.argmax(photons))
    if photons[worst] > MAX_EVENT_DRIVEN_PHOTONS or rounds > MAX_EVENT_ROUNDS:
        raise RunawayTrajectoryError(
            f"event_driven trajectory ran away at t={t[worst]:.4g} "
            f"(|alpha|^2={photons[worst]:.3g} after {rounds} rounds); use fixed_step stepping"
        )


def run_fixed_step(alpha: np.ndarray, params: CavityParams, config: SimConfig,
                   streams: TrajectoryStreams, observer):
    """
    Advance all rows on the fixed dt grid.

    Per step: emission test with the exact survival probability, detection
    test, feedback, then no-jump propagation. Emissions are time-stamped at
    the midpoint of their step.
    """
    kappa, eta, beta, dt = params.kappa, params.eta, params.beta, config.dt
    drive_params = params if config.measurement_drive else params.measurement_stage()
    decay = math.exp(-0.5 * kappa * dt)
    drive = propagate_no_jump(0j, drive_params, dt)
    emit_exponent = -math.expm1(-kappa * dt)
    n_steps = int(round(config.t_max / dt))
    steps_per_point = int(round(observer.spacing / dt))

    alpha = np.array(alpha, dtype=np.complex128)
    rows_all = np.arange(alpha.shape[0])
    for step in range(n_steps + 1):
        if step % steps_per_point == 0:
            observer.add_point(step // steps_per_point, alpha)
        if step == n_steps:
            break
        u = streams.next(rows_all)
        v = streams.next(rows_all)
        p_emit = -np.expm1(-np.abs(alpha) ** 2 * emit_exponent)
        emitted = np.flatnonzero(u < p_emit)
        if emitted.size:
            detected = v[emitted] < eta
            observer.add_events(emitted, np.full(emitted.size, (step + 0.5) * dt), detected)
            alpha[emitted[detected]] += beta
        alpha = alpha * decay + drive
    return alpha


def initial_amplitudes(params: CavityParams, n_rows: int, forced_feedback_at_zero: bool,
                       initial_alpha: Optional[complex] = None) -> np.ndarray:
    alpha0 = steady_state_alpha(params) if initial_alpha is None else complex(initial_alpha)
    if forced_feedback_at_zero:
        alpha0 = apply_emission(alpha0, True, params.beta)
    return np.full(n_rows, alpha0, dtype=np.complex128)


def simulate_trajectory(
    params: CavityParams,
    config: SimConfig,
    trajectory_index: int,
    initial_alpha: Optional[complex] = None,
    forced_feedback_at_zero: bool = False,
) -> TrajectoryRecord:
    """
    Simulate one trajectory of the measurement stage.

    Args:
        params: Cavity parameters; the prepared state is steady_state_alpha(params)
        config: Simulation settings
        trajectory_index: Index of the trajectory's random stream
        initial_alpha: Override for the prepared amplitude
        forced_feedback_at_zero: Condition on a detection (and feedback) at t=0

    Returns:
        TrajectoryRecord, fully determined by the arguments
    """
    if not 0 <= trajectory_index < config.n_traj:
        raise ValueError(f"trajectory_index {trajectory_index} outside [0, {config.n_traj})")
    check_step_size(params, config)

    alpha0 = initial_amplitudes(params, 1, forced_feedback_at_zero, initial_alpha)
    streams = TrajectoryStreams(config.master_seed, [trajectory_index])
    sampler = AmplitudeSampler(1, config.n_samples, config.sample_stride, params.kappa)
    if config.stepping is Stepping.EVENT_DRIVEN:
        run_event_driven(alpha0, params, config.t_max, streams, sampler)
    else:
        run_fixed_step(alpha0, params, config, streams, sampler)

    events = [EmissionEvent(time=0.0, detected=True, feedback_applied=True)] if forced_feedback_at_zero else []
    times, detected = sampler.events_for_row(0)
    events.extend(
        EmissionEvent(time=float(t), detected=bool(d), feedback_applied=bool(d))
        for t, d in zip(times, detected)
    )
    return TrajectoryRecord(
        params=params,
        initial_alpha=complex(alpha0[0]),
        events=events,
        alpha_samples=[complex(a) for a in sampler.samples[0]],
        sample_stride=config.sample_stride,
        rng_index=trajectory_index,
    )
