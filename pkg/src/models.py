"""Validated value types shared by the engine, the analysis and the runner."""
import math
from enum import Enum
from typing import List, Optional, Tuple

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, field_validator, model_validator
from typing_extensions import Annotated

from config import (
    DEFAULT_BIN_WIDTH,
    DEFAULT_BLOCK_SIZE,
    DEFAULT_BOOTSTRAP_SAMPLES,
    DEFAULT_DPHI_PI,
    DEFAULT_DT,
    DEFAULT_LEAKAGE_THRESHOLD,
    DEFAULT_ORACLE_DT,
    DEFAULT_SAMPLE_STRIDE,
    DEFAULT_SEED,
    DEFAULT_T_MAX,
    MAX_FIXED_STEP_DT,
)

TWO_PI = 2.0 * math.pi


def _to_complex(value):
    """Coerce numbers, pairs and 'RE,IM' strings to a finite complex."""
    if isinstance(value, str):
        parts = [p.strip() for p in value.split(",") if p.strip()]
        if len(parts) == 1:
            value = complex(parts[0].replace("i", "j"))
        elif len(parts) == 2:
            value = complex(float(parts[0]), float(parts[1]))
        else:
            raise ValueError(f"cannot read complex value from '{value}'")
    elif isinstance(value, (tuple, list)):
        if len(value) != 2:
            raise ValueError("complex pair must have two entries")
        value = complex(float(value[0]), float(value[1]))
    else:
        value = complex(value)
    if not (math.isfinite(value.real) and math.isfinite(value.imag)):
        raise ValueError("complex value must be finite")
    return value


# Coherent-state amplitude alpha. Plain complex so the hot loops stay numpy.
CoherentAmplitude = Annotated[complex, BeforeValidator(_to_complex)]


class Stepping(str, Enum):
    FIXED_STEP = "fixed_step"
    EVENT_DRIVEN = "event_driven"


class FeedbackConvention(str, Enum):
    """Default feedback displacement when beta is not given explicitly."""
    AMPLITUDE = "amplitude"      # beta = +|alpha_ss|
    QUADRATURE = "quadrature"    # beta = -i |alpha_ss|


class CavityParams(BaseModel):
    """Physical parameters of one experiment.

    omega is the preparation-stage Rabi frequency; it fixes the prepared
    amplitude (omega / kappa) e^{-i phi}. Whether it also drives the
    measurement stage is a simulation choice (SimConfig.measurement_drive).
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kappa: float = Field(1.0, gt=0)
    omega: float = Field(0.0, ge=0)
    phi: float = 0.0
    eta: float = Field(0.5, ge=0, le=1)
    beta: CoherentAmplitude = 0j

    @field_validator("kappa", "omega", "phi", "eta")
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("must be finite")
        return value

    @field_validator("phi")
    @classmethod
    def _canonical_phase(cls, value: float) -> float:
        phi = math.fmod(value, TWO_PI)
        if phi < 0:
            phi += TWO_PI
        # fmod can land exactly on 2*pi after the shift
        return 0.0 if phi >= TWO_PI else phi

    @classmethod
    def from_alpha_sq(
        cls,
        alpha_sq: float,
        phi: float,
        eta: float,
        beta: Optional[complex] = None,
        kappa: float = 1.0,
        feedback_convention: FeedbackConvention = FeedbackConvention.AMPLITUDE,
    ) -> "CavityParams":
        """
        Build parameters from the prepared mean photon number.

        Args:
            alpha_sq: Mean photon number |alpha_ss|^2 of the prepared state
            phi: Unknown phase (radians)
            eta: Detector efficiency
            beta: Feedback displacement; derived from the convention when None
            kappa: Cavity decay rate
            feedback_convention: Which default displacement to use

        Returns:
            Validated CavityParams
        """
        if alpha_sq < 0:
            raise ValueError("alpha_sq must be non-negative")
        amplitude = math.sqrt(alpha_sq)
        if beta is None:
            beta = default_beta(amplitude, feedback_convention)
        return cls(kappa=kappa, omega=kappa * amplitude, phi=phi, eta=eta, beta=beta)

    @property
    def alpha_ss_abs(self) -> float:
        return self.omega / self.kappa

    def replace(self, **changes) -> "CavityParams":
        """Validated copy with some fields changed."""
        return type(self)(**{**self.model_dump(), **changes})

    def measurement_stage(self) -> "CavityParams":
        """The same cavity with the driving laser switched off."""
        return self.replace(omega=0.0)


def default_beta(amplitude: float, convention: FeedbackConvention) -> complex:
    if FeedbackConvention(convention) is FeedbackConvention.QUADRATURE:
        return complex(0.0, -amplitude)
    return complex(amplitude, 0.0)


class SimConfig(BaseModel):
    """Numerical settings of one ensemble run (times in units of 1/kappa)."""
    model_config = ConfigDict(frozen=True)

    dt: float = Field(DEFAULT_DT, gt=0)
    t_max: float = Field(DEFAULT_T_MAX, ge=0)
    n_traj: int = Field(10_000, ge=1)
    master_seed: int = Field(DEFAULT_SEED, ge=0, lt=2**64)
    stepping: Stepping = Stepping.FIXED_STEP
    sample_stride: float = Field(DEFAULT_SAMPLE_STRIDE, gt=0)
    bin_width: float = Field(DEFAULT_BIN_WIDTH, gt=0)
    block_size: int = Field(DEFAULT_BLOCK_SIZE, ge=1)
    measurement_drive: bool = False

    @model_validator(mode="after")
    def _check_grids(self) -> "SimConfig":
        if self.stepping is Stepping.FIXED_STEP:
            if self.dt > MAX_FIXED_STEP_DT:
                raise ValueError(f"dt={self.dt} exceeds the fixed-step limit {MAX_FIXED_STEP_DT}")
            for name in ("bin_width", "sample_stride"):
                ratio = getattr(self, name) / self.dt
                if ratio < 1 - 1e-9 or abs(ratio - round(ratio)) > 1e-6:
                    raise ValueError(f"{name} must be a whole multiple of dt in fixed_step mode")
        if self.measurement_drive and self.stepping is Stepping.EVENT_DRIVEN:
            raise ValueError("event_driven stepping requires the drive to be off (omega = 0)")
        return self

    def replace(self, **changes) -> "SimConfig":
        return type(self)(**{**self.model_dump(), **changes})

    @property
    def n_bins(self) -> int:
        return int(round(self.t_max / self.bin_width))

    @property
    def n_samples(self) -> int:
        return int(math.floor(self.t_max / self.sample_stride + 1e-9)) + 1

    @property
    def n_blocks(self) -> int:
        return -(-self.n_traj // self.block_size)

    def block_indices(self, block: int) -> range:
        start = block * self.block_size
        return range(start, min(start + self.block_size, self.n_traj))


class EmissionEvent(BaseModel):
    model_config = ConfigDict(frozen=True)

    time: float = Field(ge=0)
    detected: bool
    feedback_applied: bool

    @model_validator(mode="after")
    def _feedback_needs_detection(self) -> "EmissionEvent":
        if self.feedback_applied and not self.detected:
            raise ValueError("feedback can only follow a detection")
        return self


class TrajectoryRecord(BaseModel):
    """One stochastic realization of the measurement stage."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    params: CavityParams
    initial_alpha: CoherentAmplitude
    events: List[EmissionEvent]
    alpha_samples: List[CoherentAmplitude]
    sample_stride: float
    rng_index: int = Field(ge=0)

    @model_validator(mode="after")
    def _check_log(self) -> "TrajectoryRecord":
        times = [e.time for e in self.events]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("event times must be strictly increasing")
        if not self.alpha_samples or self.alpha_samples[0] != self.initial_alpha:
            raise ValueError("alpha_samples must start at initial_alpha")
        return self

    @property
    def sample_times(self) -> List[float]:
        return [k * self.sample_stride for k in range(len(self.alpha_samples))]

    @property
    def detected_count(self) -> int:
        return sum(1 for e in self.events if e.detected)


class UncertaintyMode(str, Enum):
    TRAJECTORY_STD = "trajectory_std"
    BOOTSTRAP = "bootstrap"


class AccuracyPoint(BaseModel):
    """Error-propagation accuracy delta_phi = signal_std / |dM/dphi| at one resource value."""
    model_config = ConfigDict(frozen=True)

    resource: float
    signal: float
    signal_std: float = Field(ge=0)
    sensitivity: float = Field(ge=0)
    delta_phi: Optional[float] = None
    uncertainty_mode: UncertaintyMode
    below_noise_floor: bool = False
    gradient_stderr: Optional[float] = None

    @model_validator(mode="after")
    def _error_propagation(self) -> "AccuracyPoint":
        if self.below_noise_floor or self.sensitivity <= 0:
            if self.delta_phi is not None:
                raise ValueError("no accuracy is reported without a resolved gradient")
        elif self.delta_phi != self.signal_std / self.sensitivity:
            raise ValueError("delta_phi must equal signal_std / sensitivity")
        return self


class PowerLawFit(BaseModel):
    model_config = ConfigDict(frozen=True)

    exponent: float
    log_prefactor: float
    r_squared: float = Field(ge=0, le=1)
    n_points: int = Field(ge=3)
    resource_range: Tuple[float, float]


class ExperimentKind(str, Enum):
    STEADY_STATE = "steady_state"
    PHASE_DIAGRAM = "phase_diagram"
    INTENSITY = "intensity"
    G2 = "g2"
    ACCURACY_TIME = "accuracy_time"
    ACCURACY_PHOTON = "accuracy_photon"
    ACCURACY_GRID = "accuracy_grid"
    SCALING_FIT = "scaling_fit"
    ORACLE_VALIDATE = "oracle_validate"
    KRAUS_DEMO = "kraus_demo"


# What the values of a sweep mean for each kind
SWEEP_QUANTITY = {
    ExperimentKind.PHASE_DIAGRAM: "phi",
    ExperimentKind.INTENSITY: "phi",
    ExperimentKind.G2: "phi",
    ExperimentKind.ACCURACY_TIME: "T",
    ExperimentKind.ACCURACY_PHOTON: "alpha_sq",
    ExperimentKind.ACCURACY_GRID: "alpha_sq",
    ExperimentKind.SCALING_FIT: "T",
}


class SignalKind(str, Enum):
    INTENSITY = "intensity"
    G2 = "g2"


class IntensityEstimator(str, Enum):
    EMITTED = "emitted"
    DETECTED = "detected"
    AMPLITUDE = "amplitude"


class AnalysisOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    signal: SignalKind = SignalKind.INTENSITY
    # None picks the signal's default for both
    estimator: Optional[IntensityEstimator] = None
    uncertainty: Optional[UncertaintyMode] = None
    dphi: float = Field(DEFAULT_DPHI_PI * math.pi, gt=0)
    fit_min: Optional[float] = None
    fit_max: Optional[float] = None
    # Without fit_max, time scans are fitted up to the minimum of the smoothed accuracy
    fit_to_minimum: bool = True
    smoothing_window: float = Field(0.5, gt=0)
    bootstrap_samples: int = Field(DEFAULT_BOOTSTRAP_SAMPLES, ge=2)
    snapshot_times: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])

    @model_validator(mode="after")
    def _check_range(self) -> "AnalysisOptions":
        if self.fit_min is not None and self.fit_max is not None and self.fit_min >= self.fit_max:
            raise ValueError("fit_min must be below fit_max")
        if self.signal is SignalKind.G2 and self.uncertainty is UncertaintyMode.TRAJECTORY_STD:
            raise ValueError("g2 is an ensemble ratio and has no per-trajectory spread; use bootstrap")
        return self

    def resolved_estimator(self) -> IntensityEstimator:
        if self.estimator is not None:
            return self.estimator
        return IntensityEstimator.DETECTED if self.signal is SignalKind.G2 else IntensityEstimator.EMITTED

    def resolved_uncertainty(self) -> UncertaintyMode:
        if self.uncertainty is not None:
            return self.uncertainty
        return UncertaintyMode.BOOTSTRAP if self.signal is SignalKind.G2 else UncertaintyMode.TRAJECTORY_STD


class OracleOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    dim: Optional[int] = Field(None, ge=2)
    dt: float = Field(DEFAULT_ORACLE_DT, gt=0)
    leakage_threshold: float = Field(DEFAULT_LEAKAGE_THRESHOLD, gt=0)
    checkpoints: List[float] = Field(default_factory=lambda: [0.1, 0.5, 1.0])


class KrausDemoOptions(BaseModel):
    model_config = ConfigDict(frozen=True)

    pair: str = Field("swap", pattern="^(swap|projective|random)$")
    n: int = Field(2, ge=1, le=12)


class ExperimentSpec(BaseModel):
    """Fully validated description of one experiment run."""
    model_config = ConfigDict(frozen=True)

    kind: ExperimentKind
    params: CavityParams
    config: SimConfig
    sweep: Optional[List[float]] = None
    output_path: str
    input_path: Optional[str] = None
    workers: int = Field(1, ge=1)
    # beta follows |alpha_ss| when rebuilt for another photon number, unless given explicitly
    beta_auto: bool = True
    feedback_convention: FeedbackConvention = FeedbackConvention.AMPLITUDE
    analysis: AnalysisOptions = Field(default_factory=AnalysisOptions)
    oracle: OracleOptions = Field(default_factory=OracleOptions)
    kraus: KrausDemoOptions = Field(default_factory=KrausDemoOptions)

    @model_validator(mode="after")
    def _sweep_matches_kind(self) -> "ExperimentSpec":
        if self.sweep is not None:
            if self.kind not in SWEEP_QUANTITY:
                raise ValueError(f"experiment kind '{self.kind.value}' takes no sweep")
            if not self.sweep:
                raise ValueError("sweep must list at least one value")
            if SWEEP_QUANTITY[self.kind] in ("T", "alpha_sq") and min(self.sweep) <= 0:
                raise ValueError(f"{SWEEP_QUANTITY[self.kind]} sweep values must be positive")
        return self

    @property
    def sweep_quantity(self) -> Optional[str]:
        return SWEEP_QUANTITY.get(self.kind)
