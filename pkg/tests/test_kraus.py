"""Tests for the sequential-measurement / entangled-state equivalence."""
import logging
import math

import numpy as np
import pytest

from src.engine.kraus import (
    KrausPair,
    entangled_equivalent_state,
    product_basis_vector,
    sequential_measurement_distribution,
    single_shot_distribution,
)

PLUS = np.array([1.0, 1.0]) / math.sqrt(2)


def test_swap_pair_alternates_outcomes():
    pair = KrausPair.swap()
    distribution = sequential_measurement_distribution(pair, PLUS, 2)
    assert distribution["01"] == pytest.approx(0.5, abs=1e-12)
    assert distribution["10"] == pytest.approx(0.5, abs=1e-12)
    assert distribution["00"] == pytest.approx(0.0, abs=1e-12)
    assert distribution["11"] == pytest.approx(0.0, abs=1e-12)


def test_swap_pair_entangled_state():
    coefficients = entangled_equivalent_state(KrausPair.swap(), PLUS, 2)
    np.testing.assert_allclose(coefficients, [0.0, math.sqrt(0.5), math.sqrt(0.5), 0.0], atol=1e-12)
    state = product_basis_vector(KrausPair.swap(), coefficients, 2)
    assert np.linalg.norm(state) == pytest.approx(1.0, abs=1e-12)
    # |01> + |10> over sqrt 2 in the computational basis
    np.testing.assert_allclose(state, [0.0, math.sqrt(0.5), math.sqrt(0.5), 0.0], atol=1e-12)
    assert single_shot_distribution(KrausPair.swap(), state, 2) == pytest.approx(
        {"00": 0.0, "01": 0.5, "10": 0.5, "11": 0.0}, abs=1e-12)


def test_projective_pair_repeats_first_outcome():
    distribution = sequential_measurement_distribution(KrausPair.projective(), PLUS, 3)
    assert distribution["000"] == pytest.approx(0.5, abs=1e-12)
    assert distribution["111"] == pytest.approx(0.5, abs=1e-12)
    assert sum(distribution.values()) == pytest.approx(1.0, abs=1e-12)


def test_single_round_is_born_rule():
    psi = np.array([0.6, 0.8j])
    distribution = sequential_measurement_distribution(KrausPair.swap(), psi, 1)
    assert distribution == pytest.approx({"0": 0.36, "1": 0.64}, abs=1e-12)


@pytest.mark.parametrize("n", [1, 3, 5, 6])
def test_random_pairs_match_single_shot(n):
    rng = np.random.default_rng(100 + n)
    pair = KrausPair.random(rng)
    psi = rng.normal(size=2) + 1j * rng.normal(size=2)
    psi /= np.linalg.norm(psi)
    sequential = sequential_measurement_distribution(pair, psi, n)
    state = product_basis_vector(pair, entangled_equivalent_state(pair, psi, n), n)
    entangled = single_shot_distribution(pair, state, n)
    assert sequential.keys() == entangled.keys()
    for outcome in sequential:
        assert abs(sequential[outcome] - entangled[outcome]) < 1e-12
    assert sum(sequential.values()) == pytest.approx(1.0, abs=1e-12)


def test_random_pair_is_complete():
    pair = KrausPair.random(np.random.default_rng(4))
    assert pair.completeness_error() < 1e-12


def test_incomplete_pair_warns(caplog):
    a, b = np.array([1.0, 0.0], dtype=complex), np.array([0.0, 1.0], dtype=complex)
    pair = KrausPair(a, b, 2 * b, a)
    with caplog.at_level(logging.WARNING):
        distribution = sequential_measurement_distribution(pair, PLUS, 1)
    assert any("completeness" in record.getMessage() for record in caplog.records)
    assert distribution["0"] == pytest.approx(2.0, abs=1e-12)


def test_basis_must_be_orthonormal():
    with pytest.raises(ValueError):
        KrausPair.swap(xi0=(1, 0), xi1=(1, 1))


def test_inputs_validated():
    with pytest.raises(ValueError):
        sequential_measurement_distribution(KrausPair.swap(), PLUS, 0)
    with pytest.raises(ValueError):
        entangled_equivalent_state(KrausPair.swap(), np.array([1.0, 1.0]), 2)
