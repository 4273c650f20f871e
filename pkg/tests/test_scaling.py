"""Tests for power-law fits and window smoothing."""
import logging
import math

import numpy as np
import pandas as pd
import pytest

from src.analysis.scaling import (
    accuracy_table,
    falling_branch_end,
    fit_table,
    power_law_fit,
    time_average_smoothing,
)
from src.models import AccuracyPoint, UncertaintyMode


def _table(resource, delta_phi):
    return pd.DataFrame({"resource": resource, "delta_phi": delta_phi})


def test_exact_inverse_square_root():
    fit = power_law_fit(_table([1.0, 10.0, 100.0], [1.0, 10 ** -0.5, 0.1]))
    assert fit.exponent == pytest.approx(-0.5, abs=1e-12)
    assert fit.log_prefactor == pytest.approx(0.0, abs=1e-12)
    assert fit.r_squared == pytest.approx(1.0, abs=1e-12)
    assert fit.n_points == 3


def test_prefactor_and_range():
    resource = np.linspace(0.5, 5.0, 10)
    fit = power_law_fit(_table(resource, 3.0 * resource ** -0.7))
    assert fit.exponent == pytest.approx(-0.7, abs=1e-12)
    assert fit.log_prefactor == pytest.approx(math.log(3.0), abs=1e-12)
    assert fit.resource_range == (0.5, 5.0)


def test_exponent_invariant_under_resource_rescaling():
    resource = np.array([1.0, 2.0, 3.0, 5.0, 8.0])
    values = np.array([0.9, 0.7, 0.55, 0.45, 0.33])
    base = power_law_fit(_table(resource, values))
    scaled = power_law_fit(_table(7.3 * resource, values))
    assert scaled.exponent == pytest.approx(base.exponent, abs=1e-12)


def test_fit_range_is_inclusive():
    resource = np.array([0.1, 1.0, 2.0, 4.0, 40.0])
    values = np.array([5.0, 1.0, 0.5, 0.25, 9.0])
    fit = power_law_fit(_table(resource, values), (1.0, 4.0))
    assert fit.n_points == 3
    assert fit.exponent == pytest.approx(-1.0, abs=1e-12)
    assert fit.resource_range == (1.0, 4.0)


def test_missing_accuracies_are_skipped():
    fit = power_law_fit(_table([1.0, 2.0, 3.0, 4.0], [1.0, np.nan, 1 / 3, 0.25]))
    assert fit.n_points == 3
    assert fit.exponent == pytest.approx(-1.0, abs=1e-12)


def test_too_few_points_rejected():
    with pytest.raises(ValueError):
        power_law_fit(_table([1.0, 2.0], [1.0, 0.5]))


def test_non_positive_values_rejected():
    with pytest.raises(ValueError):
        power_law_fit(_table([0.0, 1.0, 2.0], [1.0, 0.5, 0.2]))
    with pytest.raises(ValueError):
        power_law_fit(_table([1.0, 2.0, 3.0], [1.0, -0.5, 0.2]))


def test_poor_fit_warns(caplog):
    with caplog.at_level(logging.WARNING):
        fit = power_law_fit(_table([1, 2, 3, 4, 5, 6], [1.0, 5.0, 1.0, 5.0, 1.0, 5.0]))
    assert fit.r_squared < 0.9
    assert any("poor" in record.getMessage() for record in caplog.records)


def test_fit_accepts_accuracy_points():
    points = [
        AccuracyPoint(resource=r, signal=1.0, signal_std=r ** -0.5, sensitivity=1.0, delta_phi=r ** -0.5,
                      uncertainty_mode=UncertaintyMode.TRAJECTORY_STD)
        for r in (1.0, 4.0, 16.0)
    ]
    fit = power_law_fit(points)
    assert fit.exponent == pytest.approx(-0.5, abs=1e-12)
    assert list(fit_table(fit).columns) == [
        "exponent", "log_prefactor", "r_squared", "n_points", "range_min", "range_max"
    ]


def test_accuracy_table_blanks_unresolved_points():
    flagged = AccuracyPoint(resource=0.5, signal=1.0, signal_std=0.1, sensitivity=0.01,
                            uncertainty_mode=UncertaintyMode.BOOTSTRAP, below_noise_floor=True)
    table = accuracy_table([flagged])
    assert math.isnan(table.loc[0, "delta_phi"])
    assert table.loc[0, "uncertainty_mode"] == "bootstrap"


def test_smoothing_leaves_constant_unchanged():
    times = np.arange(1, 101) * 0.01
    table = _table(times, np.full(times.size, 0.3))
    smoothed = time_average_smoothing(table, 0.2)
    np.testing.assert_allclose(smoothed["delta_phi"], 0.3, rtol=1e-12)


def test_smoothing_reduces_jitter():
    rng = np.random.default_rng(0)
    times = np.arange(1000) * 0.01
    table = _table(times, 1.0 + rng.normal(size=times.size))
    smoothed = time_average_smoothing(table, 0.5)["delta_phi"].to_numpy()
    assert 0.07 < np.std(smoothed) < 0.25
    assert np.mean(smoothed) == pytest.approx(1.0, abs=0.1)


def test_smoothing_ignores_missing_values_and_sorts():
    table = _table([0.3, 0.1, 0.2], [3.0, 1.0, np.nan])
    smoothed = time_average_smoothing(table, 0.25)
    assert list(smoothed["resource"]) == [0.1, 0.2, 0.3]
    assert smoothed["delta_phi"].tolist() == pytest.approx([1.0, 2.0, 3.0])


def test_smoothing_window_must_be_positive():
    with pytest.raises(ValueError):
        time_average_smoothing(_table([0.1, 0.2], [1.0, 1.0]), 0.0)


def test_fit_stops_at_the_accuracy_minimum():
    times = np.round(np.arange(1, 21) * 0.1, 10)
    values = np.where(times <= 1.0, times ** -0.5, times ** 2)
    table = _table(times, values)
    end = falling_branch_end(table, 0.2, fit_min=0.2)
    assert 0.85 < end <= 1.0
    fit = power_law_fit(table, (0.2, end))
    assert fit.exponent == pytest.approx(-0.5, abs=1e-9)
    # the full range mixes in the rising branch
    assert power_law_fit(table, (0.2, None)).exponent > -0.3


def test_monotone_accuracy_is_fitted_to_the_end():
    times = np.arange(1, 11) * 0.2
    assert falling_branch_end(_table(times, times ** -0.5), 0.2) == pytest.approx(2.0)


def test_minimum_too_early_keeps_the_full_range():
    times = np.arange(1, 11) * 0.2
    assert falling_branch_end(_table(times, times ** 2), 0.2) is None
