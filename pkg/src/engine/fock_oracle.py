"""Truncated Fock-basis integrator for the cavity master equation, with and without feedback.

Serves as an independent check of the trajectory engine: the ensemble mean of
|alpha(t)|^2 has to match <c^dagger c>(t) of the density matrix.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.special import gammaln

from config import DEFAULT_LEAKAGE_THRESHOLD, DEFAULT_ORACLE_DT, MIN_ORACLE_DIM
from src.engine.trajectory import apply_emission, steady_state_alpha
from src.models import CavityParams

logger = logging.getLogger(__name__)


class TruncationLeakageError(RuntimeError):
    """Population reached the top Fock level; the truncation is no longer trustworthy."""


@dataclass(frozen=True)
class FockOperator:
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def dag(self) -> "FockOperator":
        return FockOperator(self.entries.conj().T)


@dataclass(frozen=True)
class FockOperators:
    c: FockOperator
    c_dagger: FockOperator
    identity: FockOperator

    @property
    def dim(self) -> int:
        return self.c.dim


@dataclass(frozen=True)
class FockDensityMatrix:
    entries: np.ndarray

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        return float(np.real(np.trace(self.entries)))

    @property
    def top_population(self) -> float:
        return float(np.real(self.entries[-1, -1]))

    def photon_number(self) -> float:
        return float(np.real(np.arange(self.dim) @ np.diag(self.entries)))

    def check(self, hermitian_tol: float = 1e-10, trace_tol: float = 1e-8, eig_tol: float = 1e-8):
        """Raise ValueError unless rho is Hermitian, unit-trace and positive within tolerance."""
        rho = self.entries
        if np.max(np.abs(rho - rho.conj().T)) > hermitian_tol:
            raise ValueError("density matrix is not Hermitian")
        if abs(self.trace - 1.0) > trace_tol:
            raise ValueError(f"density matrix trace {self.trace} differs from 1")
        if np.min(np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))) < -eig_tol:
            raise ValueError("density matrix has a negative eigenvalue")


def build_operators(dim: int) -> FockOperators:
    """
    Ladder operators on the lowest dim Fock levels.

    Args:
        dim: Truncation dimension, at least 2

    Returns:
        FockOperators with <n-1|c|n> = sqrt(n)
    """
    if dim < 2:
        raise ValueError(f"dim must be at least 2, got {dim}")
    c = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(np.complex128)
    return FockOperators(
        c=FockOperator(c),
        c_dagger=FockOperator(c.conj().T.copy()),
        identity=FockOperator(np.eye(dim, dtype=np.complex128)),
    )


def coherent_vector(alpha: complex, dim: int) -> np.ndarray:
    n = np.arange(dim)
    if alpha == 0:
        vec = np.zeros(dim, dtype=np.complex128)
        vec[0] = 1.0
        return vec
    log_mag = -0.5 * abs(alpha) ** 2 + n * math.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    return np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))


def coherent_state(alpha: complex, dim: int) -> FockDensityMatrix:
    """
    Projector onto the coherent state |alpha> in the truncated basis.

    Raises:
        ValueError: When |alpha|^2 exceeds dim/4 or the truncated norm drifts from 1
    """
    if abs(alpha) ** 2 > dim / 4:
        raise ValueError(f"dim={dim} is too small for |alpha|^2={abs(alpha) ** 2:.3f}")
    vec = coherent_vector(alpha, dim)
    norm = float(np.vdot(vec, vec).real)
    if abs(norm - 1.0) > 1e-8:
        raise ValueError(f"truncated coherent state has norm {norm}; increase dim")
    return FockDensityMatrix(np.outer(vec, vec.conj()))


def displacement(beta: complex, dim: int, padding: int = 0) -> FockOperator:
    """
    D(beta) = exp(beta c^dagger - beta^* c) on the lowest dim levels.

    With padding=0 the exponential is taken in the truncated space, which keeps
    it exactly unitary (and the feedback master equation trace-preserving).
    A positive padding exponentiates in a larger space and crops, trading
    unitarity for accuracy right below the cut.
    """
    ops = build_operators(dim + padding)
    generator = beta * ops.c_dagger.entries - np.conj(beta) * ops.c.entries
    return FockOperator(expm(generator)[:dim, :dim])


def default_dimension(params: CavityParams, minimum: int = MIN_ORACLE_DIM) -> int:
    """Smallest power of two >= 4 (|alpha_ss| + |beta|)^2 + 20, and at least minimum."""
    expected_max = (params.alpha_ss_abs + abs(params.beta)) ** 2
    target = max(4 * expected_max + 20, minimum)
    return 1 << int(math.ceil(math.log2(target)))


class LindbladGenerator:
    """Right-hand side of the cavity master equation at fixed parameters."""

    def __init__(self, params: CavityParams, dim: int, with_feedback: bool):
        ops = build_operators(dim)
        self.params = params
        self.with_feedback = with_feedback
        self.c = ops.c.entries
        self.cd = ops.c_dagger.entries
        self.n = np.arange(dim, dtype=float)
        self.sqrt_n = np.sqrt(self.n[1:])
        # Drive H = (i Omega / 2)(e^{-i phi} c^dag - e^{i phi} c); its fixed point is (Omega/kappa) e^{-i phi}
        phase = np.exp(-1j * params.phi)
        self.hamiltonian = 0.5j * params.omega * (phase * self.cd - np.conj(phase) * self.c)
        self.feedback = displacement(params.beta, dim).entries if with_feedback else None

    def jump(self, rho: np.ndarray) -> np.ndarray:
        """c rho c^dagger, using that c only has the superdiagonal sqrt(n)."""
        out = np.zeros_like(rho)
        out[:-1, :-1] = self.sqrt_n[:, None] * rho[1:, 1:] * self.sqrt_n[None, :]
        return out

    def __call__(self, rho: np.ndarray) -> np.ndarray:
        kappa, eta = self.params.kappa, self.params.eta
        jump = self.jump(rho)
        drho = kappa * jump - 0.5 * kappa * (self.n[:, None] + self.n[None, :]) * rho
        if self.params.omega != 0:
            drho -= 1j * (self.hamiltonian @ rho - rho @ self.hamiltonian)
        if self.with_feedback:
            R = self.feedback
            drho += eta * kappa * (R @ jump @ R.conj().T - jump)
        return drho


def lindblad_rhs(rho: FockDensityMatrix, params: CavityParams, with_feedback: bool) -> FockDensityMatrix:
    """
    Time derivative of rho under the master equation.

    Args:
        rho: Current density matrix
        params: Cavity parameters (omega is the drive)
        with_feedback: Apply D(beta) after each detected emission

    Returns:
        d rho / dt as a FockDensityMatrix (trace zero, not unit trace)
    """
    return FockDensityMatrix(LindbladGenerator(params, rho.dim, with_feedback)(rho.entries))


def _rk4_step(rhs: LindbladGenerator, rho: np.ndarray, dt: float) -> np.ndarray:
    k1 = rhs(rho)
    k2 = rhs(rho + 0.5 * dt * k1)
    k3 = rhs(rho + 0.5 * dt * k2)
    k4 = rhs(rho + dt * k3)
    return rho + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate(
    rho0: FockDensityMatrix,
    params: CavityParams,
    t: float,
    dt: float = DEFAULT_ORACLE_DT,
    with_feedback: bool = True,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
    generator: Optional[LindbladGenerator] = None,
) -> FockDensityMatrix:
    """
    Fourth-order Runge-Kutta integration over a duration t.

    Args:
        rho0: Initial density matrix
        params: Cavity parameters
        t: Duration
        dt: Largest step; t is split into equal steps no longer than dt
        with_feedback: Include the feedback displacement
        leakage_threshold: Largest tolerated top-level population
        generator: Prebuilt right-hand side for rho0.dim (reused across calls)

    Returns:
        Evolved density matrix

    Raises:
        TruncationLeakageError: When the top Fock level population exceeds the threshold
        ValueError: When the result is not a valid density matrix (step too coarse)
    """
    if t < 0 or dt <= 0:
        raise ValueError("need t >= 0 and dt > 0")
    rhs = generator or LindbladGenerator(params, rho0.dim, with_feedback)
    rho = rho0.entries.astype(np.complex128, copy=True)
    n_steps = int(math.ceil(t / dt - 1e-12)) if t > 0 else 0
    step = t / n_steps if n_steps else 0.0
    for k in range(n_steps):
        rho = _rk4_step(rhs, rho, step)
        rho = 0.5 * (rho + rho.conj().T)
        top = FockDensityMatrix(rho).top_population
        if top > leakage_threshold:
            raise TruncationLeakageError(
                f"top Fock level population {top:.3e} exceeds {leakage_threshold:.1e} "
                f"at t={(k + 1) * step:.4f} (dim={rho0.dim})"
            )
    result = FockDensityMatrix(rho)
    result.check()
    return result


def photon_number_curve(
    params: CavityParams,
    times: Sequence[float],
    dim: Optional[int] = None,
    dt: float = DEFAULT_ORACLE_DT,
    with_feedback: bool = True,
    leakage_threshold: float = DEFAULT_LEAKAGE_THRESHOLD,
    forced_feedback_at_zero: bool = False,
    measurement_drive: bool = False,
) -> Dict[float, float]:
    """
    <c^dagger c>(t) of the measurement stage at the requested times.

    The cavity starts in |alpha_ss> (displaced by beta when conditioned on a
    detection at t=0) and evolves with the drive switched off unless
    measurement_drive is set.
    """
    dim = dim or default_dimension(params)
    alpha0 = apply_emission(steady_state_alpha(params), forced_feedback_at_zero, params.beta)
    rho = coherent_state(alpha0, dim)
    stage = params if measurement_drive else params.measurement_stage()
    rhs = LindbladGenerator(stage, dim, with_feedback)
    curve: Dict[float, float] = {}
    now = 0.0
    for target in sorted(times):
        rho = integrate(rho, stage, target - now, dt, with_feedback, leakage_threshold, generator=rhs)
        now = target
        curve[target] = rho.photon_number()
    logger.info(f"Oracle integrated to t={now:.3f} at dim={dim}; <n>={curve.get(now, float('nan')):.5f}")
    return curve

