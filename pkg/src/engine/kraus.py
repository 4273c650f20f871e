"""Sequential two-outcome measurements and their single-shot entangled-state equivalent.

Self-contained two-level demo: n rounds of a rank-one instrument
K_i = |target_i><xi_i| on one qubit produce the same outcome statistics as
one measurement of an n-party state in the product basis |xi_i1 ... xi_in>.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

logger = logging.getLogger(__name__)

COMPLETENESS_TOL = 1e-10


def _normalized(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.complex128).reshape(2)
    norm = np.linalg.norm(vec)
    if norm == 0:
        raise ValueError("zero vector")
    return vec / norm


@dataclass(frozen=True)
class KrausPair:
    """Two rank-one Kraus operators K_i = |target_i><xi_i| with orthonormal xi_0, xi_1."""
    xi0: np.ndarray
    xi1: np.ndarray
    target0: np.ndarray
    target1: np.ndarray

    def __post_init__(self):
        overlap = abs(np.vdot(self.xi0, self.xi1))
        if overlap > 1e-12:
            raise ValueError(f"basis states are not orthogonal (overlap {overlap:.2e})")
        for vec in (self.xi0, self.xi1):
            if abs(np.linalg.norm(vec) - 1.0) > 1e-12:
                raise ValueError("basis states must be normalized")

    @property
    def basis(self):
        return (self.xi0, self.xi1)

    @property
    def targets(self):
        return (self.target0, self.target1)

    @property
    def k0(self) -> np.ndarray:
        return np.outer(self.target0, self.xi0.conj())

    @property
    def k1(self) -> np.ndarray:
        return np.outer(self.target1, self.xi1.conj())

    @property
    def operators(self):
        return (self.k0, self.k1)

    def completeness_error(self) -> float:
        total = sum(k.conj().T @ k for k in self.operators)
        return float(np.max(np.abs(total - np.eye(2))))

    @classmethod
    def swap(cls, xi0=(1, 0), xi1=(0, 1)) -> "KrausPair":
        """K0 = |xi1><xi0|, K1 = |xi0><xi1|."""
        a, b = _normalized(xi0), _normalized(xi1)
        return cls(a, b, b, a)

    @classmethod
    def projective(cls, xi0=(1, 0), xi1=(0, 1)) -> "KrausPair":
        a, b = _normalized(xi0), _normalized(xi1)
        return cls(a, b, a, b)

    @classmethod
    def random(cls, rng: Optional[np.random.Generator] = None) -> "KrausPair":
        """Random orthonormal basis and random unit targets (always a valid instrument)."""
        rng = rng or np.random.default_rng()
        z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        q, _ = np.linalg.qr(z)
        targets = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        return cls(q[:, 0], q[:, 1], _normalized(targets[0]), _normalized(targets[1]))


def _outcome_strings(n: int):
    return ["".join(bits) for bits in itertools.product("01", repeat=n)]


def _check_inputs(psi, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError(f"n must be at least 1, got {n}")
    psi = np.asarray(psi, dtype=np.complex128).reshape(2)
    if abs(np.linalg.norm(psi) - 1.0) > 1e-10:
        raise ValueError("psi must be normalized")
    return psi


def sequential_measurement_distribution(pair: KrausPair, psi, n: int) -> Dict[str, float]:
    """
    Outcome probabilities of n successive measurements.

    Args:
        pair: Kraus pair applied in every round
        psi: Normalized two-level state
        n: Number of rounds

    Returns:
        Mapping from outcome string i1...in (first round leftmost) to
        ||K_in ... K_i1 psi||^2; raw norms when the pair is not complete
    """
    psi = _check_inputs(psi, n)
    error = pair.completeness_error()
    if error > COMPLETENESS_TOL:
        logger.warning(f"Kraus pair violates completeness by {error:.2e}; reporting raw norms")
    ops = pair.operators
    table = {}
    for outcome in _outcome_strings(n):
        state = psi
        for bit in outcome:
            state = ops[int(bit)] @ state
        table[outcome] = float(np.vdot(state, state).real)
    return table


def entangled_equivalent_state(pair: KrausPair, psi, n: int) -> np.ndarray:
    """
    Coefficients sqrt(p_{i1...in}) on the product basis |xi_i1> x ... x |xi_in>.

    Built from the rank-one chain <xi_i1|psi> <xi_i2|target_i1> ... ||target_in||,
    without multiplying Kraus matrices. Entry k belongs to the outcome string
    format(k, f'0{n}b').
    """
    psi = _check_inputs(psi, n)
    xi, targets = pair.basis, pair.targets
    coefficients = np.zeros(2 ** n)
    for k, outcome in enumerate(_outcome_strings(n)):
        bits = [int(b) for b in outcome]
        amplitude = np.vdot(xi[bits[0]], psi)
        for prev, nxt in zip(bits, bits[1:]):
            amplitude *= np.vdot(xi[nxt], targets[prev])
        amplitude *= np.linalg.norm(targets[bits[-1]])
        coefficients[k] = abs(amplitude)
    return coefficients


def _product_basis(pair: KrausPair, n: int) -> np.ndarray:
    """Columns |xi_i1 ... xi_in> in outcome-string order."""
    single = np.column_stack(pair.basis)
    matrix = np.ones((1, 1), dtype=np.complex128)
    for _ in range(n):
        matrix = np.kron(matrix, single)
    return matrix


def product_basis_vector(pair: KrausPair, coefficients: np.ndarray, n: int) -> np.ndarray:
    """Expand coefficients into a 2^n-dimensional state vector."""
    coefficients = np.asarray(coefficients, dtype=np.complex128)
    if coefficients.shape != (2 ** n,):
        raise ValueError(f"expected {2 ** n} coefficients, got shape {coefficients.shape}")
    return _product_basis(pair, n) @ coefficients


def single_shot_distribution(pair: KrausPair, state: np.ndarray, n: int) -> Dict[str, float]:
    """Outcome probabilities of one product-basis measurement of an n-party state."""
    amplitudes = _product_basis(pair, n).conj().T @ np.asarray(state, dtype=np.complex128)
    return {outcome: float(abs(a) ** 2) for outcome, a in zip(_outcome_strings(n), amplitudes)}
