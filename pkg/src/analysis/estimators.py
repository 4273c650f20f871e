"""Observables of trajectory ensembles.

Intensity I(T), the conditional intensity I(T|0), the correlation
g2(T,0) = I(T|0) / I(T), phase-space snapshots of the mean amplitude and the
error-propagation accuracy delta_phi = dM / |dM/dphi|.
"""
import cmath
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from config import NOISE_FLOOR_SIGMAS
from src.analysis.scaling import accuracy_table, time_average_smoothing
from src.engine.ensemble import BlockedEnsemble, EnsembleAccumulator, run_ensemble
from src.engine.trajectory import GRID_EPS, steady_state_alpha
from src.models import (
    AccuracyPoint,
    AnalysisOptions,
    CavityParams,
    IntensityEstimator,
    SignalKind,
    SimConfig,
    UncertaintyMode,
)

logger = logging.getLogger(__name__)

EnsembleLike = Union[BlockedEnsemble, EnsembleAccumulator]

COUNT_FIELD = {
    IntensityEstimator.EMITTED: "emitted_counts",
    IntensityEstimator.DETECTED: "detected_counts",
}
SQUARE_FIELD = {
    IntensityEstimator.EMITTED: "emitted_sq",
    IntensityEstimator.DETECTED: "detected_sq",
}

# |sin(phi0 + arg beta)| below this marks a mirror-symmetric working phase
REFLECTION_TOL = 1e-9

# Keeps the bootstrap stream apart from every trajectory stream of the same seed
BOOTSTRAP_SALT = 0xB0075


def _merged(ensemble: EnsembleLike) -> EnsembleAccumulator:
    return ensemble.merged() if isinstance(ensemble, BlockedEnsemble) else ensemble


def _require_data(acc: EnsembleAccumulator):
    if acc.n_traj == 0 or acc.n_bins == 0:
        raise ValueError("ensemble is empty")


def rate_moments(acc: EnsembleAccumulator, estimator: IntensityEstimator, kappa: float):
    """
    Per-bin mean rate and its single-trajectory spread.

    Count estimators divide the events in a bin by the bin width; the
    amplitude estimator is kappa |alpha|^2 at the bin start.
    """
    n = acc.n_traj
    if estimator is IntensityEstimator.AMPLITUDE:
        mean = kappa * acc.sum_alpha_sq / n
        second = kappa ** 2 * acc.sum_alpha_quad / n
    else:
        scale = 1.0 / acc.bin_width
        mean = getattr(acc, COUNT_FIELD[estimator]) * scale / n
        second = getattr(acc, SQUARE_FIELD[estimator]) * scale ** 2 / n
    spread = np.sqrt(np.maximum(second - mean ** 2, 0.0))
    return mean, spread


def intensity_curve(ensemble: EnsembleLike, params: CavityParams,
                    estimator: IntensityEstimator = IntensityEstimator.EMITTED) -> pd.DataFrame:
    """
    Emission rate I(T) per bin, in units of kappa.

    Args:
        ensemble: Unconditional ensemble
        params: Cavity parameters the ensemble was run with
        estimator: Which estimate the stderr column refers to; the amplitude
            estimator also adds an I_amplitude column

    Returns:
        Table with columns T, I_detected, I_emitted, I_analytic, stderr.
        T is the bin start; I_analytic is the bin-averaged rate of the same
        cavity without feedback.
    """
    acc = _merged(ensemble)
    _require_data(acc)
    if acc.conditional:
        raise ValueError("intensity_curve needs the unconditional ensemble")
    estimator = IntensityEstimator(estimator)
    T = acc.bin_starts
    emitted, _ = rate_moments(acc, IntensityEstimator.EMITTED, params.kappa)
    detected, _ = rate_moments(acc, IntensityEstimator.DETECTED, params.kappa)
    selected, spread = rate_moments(acc, estimator, params.kappa)

    mean_photons = abs(steady_state_alpha(params)) ** 2
    bw = acc.bin_width
    analytic = mean_photons * np.exp(-params.kappa * T) * -math.expm1(-params.kappa * bw) / bw

    table = pd.DataFrame({
        "T": T,
        "I_detected": detected,
        "I_emitted": emitted,
        "I_analytic": analytic,
        "stderr": spread / math.sqrt(acc.n_traj),
    })
    if estimator is IntensityEstimator.AMPLITUDE:
        table["I_amplitude"] = selected
    return table


def conditional_ensemble(params: CavityParams, config: SimConfig, workers: int = 1) -> BlockedEnsemble:
    """Ensemble conditioned on a detection at t=0: every trajectory starts at alpha_ss + beta.

    Trajectory i uses the same random stream as in the unconditional ensemble.
    """
    return run_ensemble(params, config, conditional=True, workers=workers)


def g2_curve(conditional: EnsembleLike, unconditional: EnsembleLike,
             estimator: IntensityEstimator = IntensityEstimator.DETECTED,
             kappa: float = 1.0) -> pd.DataFrame:
    """
    g2(T,0) = I(T|0) / I(T) bin by bin.

    Args:
        conditional: Ensemble conditioned on a detection at t=0
        unconditional: Ensemble on the same bin grid
        estimator: Rate estimate used for numerator and denominator
        kappa: Decay rate (only used by the amplitude estimator)

    Returns:
        Table with columns T, g2, stderr, n_conditional, n_unconditional.
        Bins without unconditional events are NaN.
    """
    num, den = _merged(conditional), _merged(unconditional)
    _require_data(num)
    _require_data(den)
    if not num.conditional or den.conditional:
        raise ValueError("g2_curve takes (conditional, unconditional) ensembles in that order")
    if num.n_bins != den.n_bins or not math.isclose(num.bin_width, den.bin_width):
        raise ValueError("conditional and unconditional ensembles use different bin grids")
    estimator = IntensityEstimator(estimator)

    a, a_spread = rate_moments(num, estimator, kappa)
    b, b_spread = rate_moments(den, estimator, kappa)
    var_a = a_spread ** 2 / num.n_traj
    var_b = b_spread ** 2 / den.n_traj
    defined = b > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        g2 = np.where(defined, a / b, np.nan)
        stderr = np.where(defined, np.sqrt(var_a / b ** 2 + a ** 2 * var_b / b ** 4), np.nan)
    if not defined.all():
        logger.warning(f"g2 undefined in {int((~defined).sum())} of {den.n_bins} bins (no unconditional events)")

    count_field = COUNT_FIELD.get(estimator, "emitted_counts")
    return pd.DataFrame({
        "T": den.bin_starts,
        "g2": g2,
        "stderr": stderr,
        "n_conditional": getattr(num, count_field),
        "n_unconditional": getattr(den, count_field),
    })


def _grid_index(acc: EnsembleAccumulator, t: float) -> int:
    k = int(round(t / acc.bin_width))
    if abs(k * acc.bin_width - t) > GRID_EPS * max(1.0, abs(t)) * 10 or not 0 <= k < acc.n_bins:
        raise ValueError(f"time {t} is not a bin start below t_max (bin width {acc.bin_width})")
    return k


def phase_diagram_snapshot(
    initial_phis: Sequence[float],
    params: CavityParams,
    config: SimConfig,
    times: Union[float, Sequence[float]],
    forced_feedback_at_zero: bool = False,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Ensemble-mean amplitude for each initial phase at the requested times.

    Args:
        initial_phis: Phases (radians) of the prepared states
        params: Cavity parameters; phi is replaced by each entry
        config: Simulation settings; times must be bin starts below t_max
        times: One time or several
        forced_feedback_at_zero: Condition every trajectory on a detection at t=0
        workers: Worker processes per ensemble

    Returns:
        Table with columns phi, t, mean_re_alpha, mean_im_alpha, std_re, std_im
    """
    times = [float(times)] if np.isscalar(times) else [float(t) for t in times]
    rows = []
    for phi in initial_phis:
        acc = run_ensemble(params.replace(phi=phi), config, conditional=forced_feedback_at_zero,
                           workers=workers).merged()
        n = acc.n_traj
        for t in times:
            k = _grid_index(acc, t)
            mean = acc.sum_alpha[k] / n
            var_re = acc.sum_re_sq[k] / n - mean.real ** 2
            var_im = acc.sum_im_sq[k] / n - mean.imag ** 2
            rows.append({
                "phi": float(phi),
                "t": t,
                "mean_re_alpha": float(mean.real),
                "mean_im_alpha": float(mean.imag),
                "std_re": math.sqrt(max(var_re, 0.0)),
                "std_im": math.sqrt(max(var_im, 0.0)),
            })
    return pd.DataFrame(rows, columns=["phi", "t", "mean_re_alpha", "mean_im_alpha", "std_re", "std_im"])


def ensemble_photon_number(ensemble: EnsembleLike, times: Sequence[float]) -> pd.DataFrame:
    """Mean |alpha(t)|^2 and its standard error at bin-start times."""
    acc = _merged(ensemble)
    _require_data(acc)
    n = acc.n_traj
    rows = []
    for t in times:
        k = _grid_index(acc, float(t))
        mean = acc.sum_alpha_sq[k] / n
        var = max(acc.sum_alpha_quad[k] / n - mean ** 2, 0.0)
        rows.append({"t": float(t), "mean_n": float(mean), "stderr": math.sqrt(var / n)})
    return pd.DataFrame(rows, columns=["t", "mean_n", "stderr"])


def phase_space_spread(table: pd.DataFrame) -> pd.DataFrame:
    """Largest distance between the mean amplitudes of different phases, per time."""
    rows = []
    for t, group in table.groupby("t", sort=True):
        points = group[["mean_re_alpha", "mean_im_alpha"]].to_numpy()
        spread = float(pdist(points).max()) if len(points) > 1 else 0.0
        rows.append({"t": float(t), "spread": spread})
    return pd.DataFrame(rows, columns=["t", "spread"])


@dataclass
class PhaseRun:
    """Ensembles simulated at one phase."""
    params: CavityParams
    unconditional: BlockedEnsemble
    conditional: Optional[BlockedEnsemble] = None


def run_phase(params: CavityParams, config: SimConfig, signal: SignalKind, workers: int = 1) -> PhaseRun:
    unconditional = run_ensemble(params, config, workers=workers)
    conditional = conditional_ensemble(params, config, workers) if signal is SignalKind.G2 else None
    return PhaseRun(params=params, unconditional=unconditional, conditional=conditional)


def _block_rate(ensemble: BlockedEnsemble, estimator: IntensityEstimator, kappa: float,
                weights: Optional[np.ndarray]) -> np.ndarray:
    if estimator is IntensityEstimator.AMPLITUDE:
        stacked, scale = ensemble.stacked("sum_alpha_sq"), kappa
    else:
        stacked, scale = ensemble.stacked(COUNT_FIELD[estimator]).astype(float), 1.0 / ensemble.blocks[0].bin_width
    sizes = ensemble.block_sizes
    if weights is None:
        return stacked.sum(axis=0) * scale / sizes.sum()
    return (weights @ stacked) * scale / (weights @ sizes)[:, None]


def signal_curve(run: PhaseRun, signal: SignalKind, estimator: IntensityEstimator,
                 weights: Optional[np.ndarray] = None) -> np.ndarray:
    """
    Signal M per bin.

    With block weights of shape (samples, n_blocks) one curve per weight row is
    returned; conditional and unconditional blocks share the weights, since
    block j of both ensembles uses the same trajectory streams.
    """
    kappa = run.params.kappa
    uncond = _block_rate(run.unconditional, estimator, kappa, weights)
    if signal is SignalKind.INTENSITY:
        return uncond
    if run.conditional is None:
        raise ValueError("g2 needs a conditional ensemble")
    cond = _block_rate(run.conditional, estimator, kappa, weights)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(uncond > 0, cond / uncond, np.nan)


def bootstrap_weights(n_blocks: int, n_samples: int, seed: int) -> np.ndarray:
    """Multinomial block counts for n_samples bootstrap resamples of n_blocks blocks."""
    rng = np.random.default_rng([int(seed), BOOTSTRAP_SALT])
    return rng.multinomial(n_blocks, np.full(n_blocks, 1.0 / n_blocks), size=n_samples).astype(float)


def scan_times(config: SimConfig) -> List[float]:
    """Every bin start after t=0."""
    return [k * config.bin_width for k in range(1, config.n_bins)]


def _make_point(resource: float, m_plus: float, m_minus: float, spread: float, dphi: float,
                mode: UncertaintyMode, gradient_stderr: Optional[float]) -> AccuracyPoint:
    signal = 0.5 * (m_plus + m_minus)
    sensitivity = abs(m_plus - m_minus) / dphi
    if not (math.isfinite(signal) and math.isfinite(sensitivity) and math.isfinite(spread)):
        return AccuracyPoint(resource=resource, signal=signal, signal_std=0.0, sensitivity=0.0,
                             uncertainty_mode=mode, below_noise_floor=True, gradient_stderr=gradient_stderr)
    flagged = gradient_stderr is not None and sensitivity < NOISE_FLOOR_SIGMAS * gradient_stderr
    resolved = not flagged and sensitivity > 0
    return AccuracyPoint(
        resource=resource,
        signal=float(signal),
        signal_std=float(spread),
        sensitivity=float(sensitivity),
        delta_phi=float(spread) / float(sensitivity) if resolved else None,
        uncertainty_mode=mode,
        below_noise_floor=flagged,
        gradient_stderr=gradient_stderr,
    )


def accuracy_from_runs(plus: PhaseRun, minus: PhaseRun, times: Sequence[float], dphi: float,
                       config: SimConfig, options: AnalysisOptions) -> List[AccuracyPoint]:
    """
    Accuracy points from ensembles at the two phases of phase_offsets.

    Both runs must share config (and so the trajectory streams). The
    gradient noise floor is a paired bootstrap over trajectory blocks.
    """
    signal = options.signal
    estimator = options.resolved_estimator()
    mode = options.resolved_uncertainty()
    if signal is SignalKind.G2 and mode is UncertaintyMode.TRAJECTORY_STD:
        raise ValueError("g2 has no per-trajectory value; use bootstrap uncertainty")
    acc = plus.unconditional.merged()
    bins = []
    for T in times:
        if not 0 <= T < config.t_max + GRID_EPS * acc.bin_width:
            raise ValueError(f"T={T} lies outside the simulated window [0, {config.t_max})")
        bins.append(acc.bin_of(T))
    bins = np.array(bins, dtype=np.int64)

    m_plus = signal_curve(plus, signal, estimator)[bins]
    m_minus = signal_curve(minus, signal, estimator)[bins]

    n_blocks = plus.unconditional.n_blocks
    gradient_stderr = None
    boot_std = None
    if n_blocks >= 2:
        weights = bootstrap_weights(n_blocks, options.bootstrap_samples, config.master_seed)
        b_plus = signal_curve(plus, signal, estimator, weights)[:, bins]
        b_minus = signal_curve(minus, signal, estimator, weights)[:, bins]
        with np.errstate(invalid="ignore"):
            gradient_stderr = np.nanstd((b_plus - b_minus) / dphi, axis=0, ddof=1)
            boot_std = np.nanstd(0.5 * (b_plus + b_minus), axis=0, ddof=1)
    elif mode is UncertaintyMode.BOOTSTRAP:
        raise ValueError("bootstrap needs at least two trajectory blocks; lower block_size")
    else:
        logger.warning("Single trajectory block: the gradient noise floor cannot be estimated")

    if mode is UncertaintyMode.TRAJECTORY_STD:
        _, s_plus = rate_moments(plus.unconditional.merged(), estimator, plus.params.kappa)
        _, s_minus = rate_moments(minus.unconditional.merged(), estimator, minus.params.kappa)
        spreads = 0.5 * (s_plus + s_minus)[bins]
    else:
        spreads = boot_std

    points = [
        _make_point(float(T), float(m_plus[i]), float(m_minus[i]), float(spreads[i]), dphi, mode,
                    None if gradient_stderr is None else float(gradient_stderr[i]))
        for i, T in enumerate(times)
    ]
    flagged = sum(p.below_noise_floor for p in points)
    if flagged:
        logger.warning(f"{flagged} of {len(points)} accuracy points are below the gradient noise floor")
    return points


def reflection_symmetric(phi0: float, beta: complex) -> bool:
    """
    True when phi0 is a fixed point of the mirror map phi -> -phi - 2 arg(beta).

    Conjugating alpha about the axis of beta maps the run at phi onto the run
    at -phi - 2 arg(beta) with the same random numbers, so a centred difference
    around such a phase cancels exactly.
    """
    if beta == 0:
        return False
    return abs(math.sin(phi0 + cmath.phase(beta))) < REFLECTION_TOL


def phase_offsets(phi0: float, dphi: float, beta: complex) -> Tuple[float, float]:
    """Phases (plus, minus) of the finite difference: centred, or forward at mirror-symmetric phi0."""
    if reflection_symmetric(phi0, beta):
        return phi0 + dphi, phi0
    return phi0 + 0.5 * dphi, phi0 - 0.5 * dphi


def _phase_pair(signal: SignalKind, phi0: float, dphi: float, params: CavityParams,
                config: SimConfig, workers: int) -> Tuple[PhaseRun, PhaseRun]:
    phi_plus, phi_minus = phase_offsets(phi0, dphi, params.beta)
    if phi_minus == phi0:
        logger.info(f"phi0={phi0 / math.pi:g} pi is mirror-symmetric; using a forward difference")
    plus = run_phase(params.replace(phi=phi_plus), config, signal, workers)
    minus = run_phase(params.replace(phi=phi_minus), config, signal, workers)
    return plus, minus


def accuracy_time_scan(
    signal: SignalKind,
    phi0: float,
    params: CavityParams,
    config: SimConfig,
    times: Optional[Sequence[float]] = None,
    options: Optional[AnalysisOptions] = None,
    workers: int = 1,
) -> List[AccuracyPoint]:
    """
    delta_phi(T) for one signal at phase phi0.

    Args:
        signal: Intensity or g2
        phi0: Working phase (radians)
        params: Cavity parameters (phi is replaced)
        config: Simulation settings shared by both phase runs
        times: Durations T to report; every bin start after 0 when None
        options: Estimator, uncertainty mode, dphi and bootstrap settings
        workers: Worker processes

    Returns:
        One AccuracyPoint per T with resource = T
    """
    options = (options or AnalysisOptions()).model_copy(update={"signal": SignalKind(signal)})
    times = scan_times(config) if times is None else list(times)
    plus, minus = _phase_pair(options.signal, phi0, options.dphi, params, config, workers)
    return accuracy_from_runs(plus, minus, times, options.dphi, config, options)


def delta_phi(
    signal: SignalKind,
    phi0: float,
    dphi: float,
    params: CavityParams,
    config: SimConfig,
    T: Optional[float] = None,
    options: Optional[AnalysisOptions] = None,
    workers: int = 1,
) -> AccuracyPoint:
    """
    Error-propagation accuracy at a single duration T.

    Args:
        signal: Intensity or g2
        phi0: Working phase (radians)
        dphi: Finite-difference offset (radians)
        params: Cavity parameters
        config: Simulation settings
        T: Duration; the last bin start when None
        options: Remaining analysis settings
        workers: Worker processes

    Returns:
        AccuracyPoint; delta_phi is None when the gradient is not resolved
    """
    if not dphi > 0:
        raise ValueError(f"dphi must be positive, got {dphi}")
    options = (options or AnalysisOptions()).model_copy(update={"dphi": dphi})
    if T is None:
        T = (config.n_bins - 1) * config.bin_width
    return accuracy_time_scan(signal, phi0, params, config, [T], options, workers)[0]


def window_times(config: SimConfig, window: float) -> List[float]:
    """Bin starts inside the averaging window [t_max - window, t_max)."""
    first = max(1, int(math.ceil((config.t_max - window) / config.bin_width - GRID_EPS)))
    return [k * config.bin_width for k in range(first, config.n_bins)]


def accuracy_photon_scan(
    signal: SignalKind,
    phi0: float,
    params_by_alpha_sq: Sequence[Tuple[float, CavityParams]],
    config: SimConfig,
    options: Optional[AnalysisOptions] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """
    Accuracy versus prepared photon number, averaged over a late time window.

    For every |alpha_ss|^2 the per-T accuracies inside
    [t_max - smoothing_window, t_max) are averaged with time_average_smoothing.
    The returned rows follow the accuracy layout with resource = |alpha_ss|^2;
    their delta_phi is the window mean of the per-T values.
    """
    options = (options or AnalysisOptions()).model_copy(update={"signal": SignalKind(signal)})
    window = options.smoothing_window
    times = window_times(config, window)
    if not times:
        raise ValueError("averaging window holds no bins; increase t_max or smoothing_window")
    centre = 0.5 * (times[0] + times[-1])
    rows = []
    for alpha_sq, params in params_by_alpha_sq:
        points = accuracy_time_scan(options.signal, phi0, params, config, times, options, workers)
        smoothed = time_average_smoothing(
            accuracy_table(points), max(window, times[-1] - times[0] + config.bin_width),
            columns=("signal", "signal_std", "sensitivity", "delta_phi"),
        )
        row = smoothed.iloc[int(np.argmin(np.abs(smoothed["resource"].to_numpy() - centre)))].copy()
        row["resource"] = float(alpha_sq)
        rows.append(row)
        logger.info(f"|alpha_ss|^2={alpha_sq:g}: window-averaged delta_phi={row['delta_phi']:.5g}")
    return pd.DataFrame(rows).reset_index(drop=True)


def accuracy_grid(
    signal: SignalKind,
    phi0: float,
    params_by_alpha_sq: Sequence[Tuple[float, CavityParams]],
    config: SimConfig,
    times: Optional[Sequence[float]] = None,
    options: Optional[AnalysisOptions] = None,
    workers: int = 1,
) -> pd.DataFrame:
    """delta_phi over |alpha_ss|^2 x T, one row per pair."""
    options = (options or AnalysisOptions()).model_copy(update={"signal": SignalKind(signal)})
    frames = []
    for alpha_sq, params in params_by_alpha_sq:
        table = accuracy_table(accuracy_time_scan(options.signal, phi0, params, config, times, options, workers))
        table = table.rename(columns={"resource": "T"})
        table.insert(0, "alpha_sq", float(alpha_sq))
        frames.append(table)
    return pd.concat(frames, ignore_index=True)
