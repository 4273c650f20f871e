"""Power-law fits of accuracy curves and time-window smoothing."""
import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.stats import linregress

from config import POOR_FIT_R_SQUARED
from src.models import AccuracyPoint, PowerLawFit

logger = logging.getLogger(__name__)

Points = Union[pd.DataFrame, Sequence[AccuracyPoint]]


def accuracy_table(points: Sequence[AccuracyPoint]) -> pd.DataFrame:
    """AccuracyPoints as a table in the accuracy CSV layout (flagged points get NaN delta_phi)."""
    rows = [
        {
            "resource": p.resource,
            "signal": p.signal,
            "signal_std": p.signal_std,
            "sensitivity": p.sensitivity,
            "delta_phi": np.nan if p.delta_phi is None else p.delta_phi,
            "uncertainty_mode": p.uncertainty_mode.value,
        }
        for p in points
    ]
    return pd.DataFrame(
        rows, columns=["resource", "signal", "signal_std", "sensitivity", "delta_phi", "uncertainty_mode"]
    )


def _as_table(points: Points) -> pd.DataFrame:
    if isinstance(points, pd.DataFrame):
        return points
    return accuracy_table(points)


def power_law_fit(points: Points, fit_range: Optional[Tuple[Optional[float], Optional[float]]] = None) -> PowerLawFit:
    """
    Fit delta_phi = A * resource^exponent by least squares in log-log space.

    Args:
        points: Table with resource and delta_phi columns, or AccuracyPoints
        fit_range: Inclusive (min, max) resource window; either end may be None

    Returns:
        PowerLawFit with the natural-log prefactor

    Raises:
        ValueError: On non-positive values or fewer than three usable points
    """
    table = _as_table(points)
    if not {"resource", "delta_phi"} <= set(table.columns):
        raise ValueError("points need 'resource' and 'delta_phi' columns")
    resource = table["resource"].to_numpy(dtype=float)
    delta_phi = table["delta_phi"].to_numpy(dtype=float)

    lo, hi = fit_range if fit_range is not None else (None, None)
    keep = np.ones(resource.shape, dtype=bool)
    if lo is not None:
        keep &= resource >= lo
    if hi is not None:
        keep &= resource <= hi
    resource, delta_phi = resource[keep], delta_phi[keep]

    missing = np.isnan(delta_phi)
    if missing.any():
        logger.info(f"Skipping {int(missing.sum())} points without a resolved accuracy")
        resource, delta_phi = resource[~missing], delta_phi[~missing]
    if np.any(resource <= 0) or np.any(delta_phi <= 0):
        raise ValueError("power-law fit needs positive resource and delta_phi values")
    if resource.size < 3:
        raise ValueError(f"power-law fit needs at least 3 points, got {resource.size}")

    result = linregress(np.log(resource), np.log(delta_phi))
    r_squared = float(min(max(result.rvalue ** 2, 0.0), 1.0))
    if r_squared < POOR_FIT_R_SQUARED:
        logger.warning(
            f"Power-law fit is poor (r^2={r_squared:.3f}); the data may follow a more complex dependence"
        )
    fit = PowerLawFit(
        exponent=float(result.slope),
        log_prefactor=float(result.intercept),
        r_squared=r_squared,
        n_points=int(resource.size),
        resource_range=(float(resource.min()), float(resource.max())),
    )
    logger.info(f"Fitted exponent {fit.exponent:.4f} over [{fit.resource_range[0]:g}, {fit.resource_range[1]:g}]")
    return fit


def fit_table(fit: PowerLawFit) -> pd.DataFrame:
    return pd.DataFrame([{
        "exponent": fit.exponent,
        "log_prefactor": fit.log_prefactor,
        "r_squared": fit.r_squared,
        "n_points": fit.n_points,
        "range_min": fit.resource_range[0],
        "range_max": fit.resource_range[1],
    }])


def time_average_smoothing(points: Points, window: float,
                           columns: Sequence[str] = ("delta_phi",)) -> pd.DataFrame:
    """
    Replace each point's value by the mean over a centred time window.

    Args:
        points: Table (or AccuracyPoints) whose resource column is a time
        window: Full window width; points within window/2 of each other are averaged
        columns: Columns to smooth

    Returns:
        New table sorted by resource; missing values are ignored inside a window
    """
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    table = _as_table(points).sort_values("resource").reset_index(drop=True)
    times = table["resource"].to_numpy(dtype=float)
    half = 0.5 * window
    lo = np.searchsorted(times, times - half * (1 + 1e-12), side="left")
    hi = np.searchsorted(times, times + half * (1 + 1e-12), side="right")

    smoothed = table.copy()
    for name in columns:
        values = table[name].to_numpy(dtype=float)
        present = ~np.isnan(values)
        sums = np.concatenate([[0.0], np.cumsum(np.where(present, values, 0.0))])
        counts = np.concatenate([[0], np.cumsum(present)])
        n = counts[hi] - counts[lo]
        with np.errstate(invalid="ignore", divide="ignore"):
            smoothed[name] = np.where(n > 0, (sums[hi] - sums[lo]) / n, np.nan)
    return smoothed


def falling_branch_end(points: Points, window: float, fit_min: Optional[float] = None) -> Optional[float]:
    """
    Resource at the minimum of the smoothed accuracy curve.

    Fixed-step trajectories emit at most once per step, so a long enough
    scan flattens out and then loses accuracy again; the power law only
    describes the falling part.

    Args:
        points: Accuracy table (or AccuracyPoints) over time
        window: Smoothing window passed to time_average_smoothing
        fit_min: Points below this resource are ignored

    Returns:
        The resource of the smoothed minimum, or None when fewer than three
        resolved points lie between fit_min and it
    """
    smoothed = time_average_smoothing(points, window)
    raw = smoothed["resource"].to_numpy(dtype=float)
    if fit_min is not None:
        smoothed = smoothed[raw >= fit_min]
    values = smoothed["delta_phi"].to_numpy(dtype=float)
    if values.size == 0 or np.all(np.isnan(values)):
        return None
    end = float(smoothed["resource"].iloc[int(np.nanargmin(values))])

    table = _as_table(points)
    resource = table["resource"].to_numpy(dtype=float)
    inside = (resource <= end) & ~np.isnan(table["delta_phi"].to_numpy(dtype=float))
    if fit_min is not None:
        inside &= resource >= fit_min
    if int(inside.sum()) < 3:
        logger.info(f"Accuracy minimum at {end:g} leaves fewer than 3 points; fitting the full range")
        return None
    return end
