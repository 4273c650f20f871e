"""Tests for the truncated Fock-basis integrator."""
import math

import numpy as np
import pytest

from src.analysis.estimators import ensemble_photon_number
from src.engine.ensemble import run_ensemble
from src.engine.fock_oracle import (
    FockDensityMatrix,
    TruncationLeakageError,
    build_operators,
    coherent_state,
    coherent_vector,
    default_dimension,
    displacement,
    integrate,
    lindblad_rhs,
    photon_number_curve,
)
from src.models import CavityParams, SimConfig


def _random_density_matrix(dim: int, seed: int = 0) -> FockDensityMatrix:
    rng = np.random.default_rng(seed)
    # keep the weight well below the cut-off
    z = np.zeros((dim, dim), dtype=np.complex128)
    low = dim // 2
    z[:low, :low] = rng.normal(size=(low, low)) + 1j * rng.normal(size=(low, low))
    rho = z @ z.conj().T
    return FockDensityMatrix(rho / np.trace(rho))


def test_ladder_operator_entries():
    ops = build_operators(4)
    expected = np.zeros((4, 4))
    expected[0, 1], expected[1, 2], expected[2, 3] = 1.0, math.sqrt(2), math.sqrt(3)
    np.testing.assert_allclose(ops.c.entries, expected)
    np.testing.assert_allclose(ops.c_dagger.entries, expected.T)
    commutator = ops.c.entries @ ops.c_dagger.entries - ops.c_dagger.entries @ ops.c.entries
    np.testing.assert_allclose(np.diag(commutator)[:-1], np.ones(3))


def test_dimension_must_hold_a_ladder():
    with pytest.raises(ValueError):
        build_operators(1)


def test_coherent_state_photon_number():
    rho = coherent_state(1.5 - 0.5j, 32)
    rho.check()
    assert rho.photon_number() == pytest.approx(2.5, abs=1e-8)
    assert coherent_state(0j, 8).photon_number() == 0.0


def test_coherent_state_needs_room():
    with pytest.raises(ValueError):
        coherent_state(3.0, 16)


def test_displacement_is_unitary_and_displaces_vacuum():
    beta = 1.2 - 0.7j
    D = displacement(beta, 64).entries
    np.testing.assert_allclose(D @ D.conj().T, np.eye(64), atol=1e-10)
    vacuum = np.zeros(64, dtype=np.complex128)
    vacuum[0] = 1.0
    np.testing.assert_allclose(D @ vacuum, coherent_vector(beta, 64), atol=1e-8)


def test_default_dimension_is_power_of_two_and_large_enough():
    params = CavityParams.from_alpha_sq(4.0, phi=0.0, eta=0.5)
    dim = default_dimension(params)
    assert dim & (dim - 1) == 0
    assert dim >= 4 * (2 + 2) ** 2 + 20
    assert default_dimension(CavityParams()) == 64


@pytest.mark.parametrize("with_feedback", [False, True])
def test_generator_preserves_trace(with_feedback):
    params = CavityParams(kappa=1.0, omega=1.0, phi=0.4, eta=0.5, beta=0.5 + 0.2j)
    drho = lindblad_rhs(_random_density_matrix(16), params, with_feedback)
    assert abs(np.trace(drho.entries)) < 1e-10
    np.testing.assert_allclose(drho.entries, drho.entries.conj().T, atol=1e-12)


def test_vacuum_is_stationary_without_drive():
    params = CavityParams(kappa=1.0, omega=0.0, eta=1.0, beta=2.0)
    drho = lindblad_rhs(coherent_state(0j, 16), params, with_feedback=True)
    assert np.max(np.abs(drho.entries)) == 0.0


def test_driven_coherent_state_is_stationary_without_feedback():
    params = CavityParams(kappa=1.0, omega=2.0, phi=0.3 * math.pi, eta=0.5, beta=2.0)
    alpha_ss = 2.0 * np.exp(-0.3j * math.pi)
    drho = lindblad_rhs(coherent_state(alpha_ss, 64), params, with_feedback=False)
    assert np.max(np.abs(drho.entries)) < 1e-8


def test_free_decay_matches_closed_form():
    params = CavityParams(kappa=1.0, omega=0.0, eta=0.5, beta=1.0)
    rho = integrate(coherent_state(1.5, 32), params, 0.5, with_feedback=False)
    rho.check()
    assert rho.photon_number() == pytest.approx(2.25 * math.exp(-0.5), abs=1e-8)


def test_integrate_rejects_an_invalid_density_matrix():
    params = CavityParams(kappa=1.0, omega=0.0, eta=0.5, beta=1.0)
    negative = FockDensityMatrix(np.diag([1.5, -0.5, 0.0, 0.0]).astype(np.complex128))
    with pytest.raises(ValueError, match="negative eigenvalue"):
        integrate(negative, params, 0.01)
    short = FockDensityMatrix(np.diag([0.5, 0.2, 0.0, 0.0]).astype(np.complex128))
    with pytest.raises(ValueError, match="trace"):
        integrate(short, params, 0.01)


def test_in_phase_feedback_pumps_the_cavity():
    # |alpha_ss|^2 = 4, beta = 2: the ensemble outgrows any basis soon after t = 0.02
    params = CavityParams.from_alpha_sq(4.0, phi=0.0, eta=0.5)
    times = [0.002 * k for k in range(1, 11)]
    curve = photon_number_curve(params, times, dim=128)
    values = [4.0] + [curve[t] for t in times]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_leakage_is_reported():
    params = CavityParams.from_alpha_sq(4.0, phi=0.0, eta=1.0)
    with pytest.raises(TruncationLeakageError):
        photon_number_curve(params, [1.0], dim=24)


@pytest.mark.parametrize("alpha_sq, phi_pi, times, dim", [
    (4.0, 1.0, [0.1, 0.5, 1.0], 64),
    (1.0, 0.3, [0.05, 0.1], 128),
])
def test_oracle_matches_trajectory_ensemble(alpha_sq, phi_pi, times, dim):
    params = CavityParams.from_alpha_sq(alpha_sq, phi=phi_pi * math.pi, eta=0.5)
    config = SimConfig(n_traj=4000, t_max=max(times) + 0.1, block_size=1000, master_seed=21)
    trajectory = ensemble_photon_number(run_ensemble(params, config), times)
    oracle = photon_number_curve(params, times, dim=dim)
    for row in trajectory.itertuples():
        assert abs(row.mean_n - oracle[row.t]) < 4 * row.stderr + 1e-6
