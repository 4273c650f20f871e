"""Main experiment pipeline."""
import logging
import math
import time
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError

from config import DEFAULT_FIT_T_MIN, FIT_MINIMUM_SMOOTHING, LOG_LEVEL
from src.analysis.estimators import (
    accuracy_grid,
    accuracy_photon_scan,
    accuracy_time_scan,
    conditional_ensemble,
    ensemble_photon_number,
    g2_curve,
    intensity_curve,
    phase_diagram_snapshot,
    phase_space_spread,
    scan_times,
    window_times,
)
from src.analysis.scaling import accuracy_table, falling_branch_end, fit_table, power_law_fit
from src.engine.ensemble import run_ensemble
from src.engine.fock_oracle import coherent_state, default_dimension, photon_number_curve
from src.engine.kraus import (
    KrausPair,
    entangled_equivalent_state,
    product_basis_vector,
    sequential_measurement_distribution,
    single_shot_distribution,
)
from src.engine.trajectory import steady_state_alpha
from src.models import CavityParams, ExperimentKind, ExperimentSpec, SimConfig, UncertaintyMode
from src.utils.config_parser import ConfigError
from src.utils.output_handler import OutputHandler

# Configure logging
logging.basicConfig(
    level=getattr(logging, LOG_LEVEL.upper(), logging.INFO),
    format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

# Agreement threshold (combined standard errors) and absolute oracle tolerance
ORACLE_Z_LIMIT = 3.0
ORACLE_TOLERANCE = 1e-6

DEFAULT_PHOTON_SWEEP = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]
DEFAULT_GRID_SWEEP = [1.0, 2.0, 4.0, 8.0]

KRAUS_AGREEMENT_TOL = 1e-12


def format_complex(value: complex, digits: int = 6) -> str:
    """Compact a+bi form without negative zeros, e.g. -2+0i."""
    re_part = round(value.real, digits) + 0.0
    im_part = round(value.imag, digits) + 0.0
    return f"{re_part:g}{im_part:+g}i"


def with_suffix(output_path: str, suffix: str) -> str:
    path = Path(output_path)
    return str(path.with_name(f"{path.stem}_{suffix}{path.suffix or '.csv'}"))


class ExperimentRunner:
    """Runs one configured experiment and writes its CSV tables."""

    def __init__(self, spec: ExperimentSpec, output_handler: Optional[OutputHandler] = None):
        """
        Initialize the runner.

        Args:
            spec: Validated experiment description
            output_handler: Optional handler override (tests inject their own)
        """
        self.spec = spec
        self.output_handler = output_handler or OutputHandler()
        self._start = time.time()
        self._handlers: Dict[ExperimentKind, Callable[[], int]] = {
            ExperimentKind.STEADY_STATE: self.run_steady_state,
            ExperimentKind.PHASE_DIAGRAM: self.run_phase_diagram,
            ExperimentKind.INTENSITY: self.run_intensity,
            ExperimentKind.G2: self.run_g2,
            ExperimentKind.ACCURACY_TIME: self.run_accuracy_time,
            ExperimentKind.ACCURACY_PHOTON: self.run_accuracy_photon,
            ExperimentKind.ACCURACY_GRID: self.run_accuracy_grid,
            ExperimentKind.SCALING_FIT: self.run_scaling_fit,
            ExperimentKind.ORACLE_VALIDATE: self.run_oracle_validate,
            ExperimentKind.KRAUS_DEMO: self.run_kraus_demo,
        }

    def run(self) -> int:
        """
        Run the experiment.

        Returns:
            Exit status: 0 on success, 1 for configuration errors, 2 for runtime
            failures (numerical errors included) and failed validations.
            Outputs of failed runs are removed.
        """
        kind = self.spec.kind
        logger.info(f"Starting experiment '{kind.value}' (seed {self.spec.config.master_seed}, "
                    f"{self.spec.config.n_traj} trajectories, {self.spec.workers} worker(s))")
        self._start = time.time()
        try:
            self.check()
            status = self._handlers[kind]()
        except (ConfigError, ValidationError) as e:
            logger.error(f"Experiment '{kind.value}' rejected its parameters: {e}")
            self.output_handler.remove_partial_outputs()
            return EXIT_CONFIG
        except Exception as e:
            logger.error(f"Experiment '{kind.value}' failed: {e}")
            self.output_handler.remove_partial_outputs()
            return EXIT_RUNTIME
        logger.info(f"Experiment '{kind.value}' finished in {time.time() - self._start:.2f}s "
                    f"with status {status}")
        return status

    def check(self):
        """
        Configuration checks that need the physics, run before any simulation.

        Raises:
            ConfigError: Naming the offending key
        """
        spec = self.spec
        kind = spec.kind
        if kind is ExperimentKind.ORACLE_VALIDATE:
            dim = spec.oracle.dim or default_dimension(spec.params)
            try:
                coherent_state(steady_state_alpha(spec.params), dim)
            except ValueError as e:
                raise ConfigError(str(e), key="dim") from None
        accuracy_kinds = (ExperimentKind.ACCURACY_TIME, ExperimentKind.ACCURACY_PHOTON, ExperimentKind.ACCURACY_GRID)
        scans = kind in accuracy_kinds or (kind is ExperimentKind.SCALING_FIT and not spec.input_path)
        if scans and spec.analysis.resolved_uncertainty() is UncertaintyMode.BOOTSTRAP and spec.config.n_blocks < 2:
            raise ConfigError("bootstrap uncertainty needs at least two trajectory blocks; lower block_size",
                              key="block_size")
        if kind is ExperimentKind.ACCURACY_PHOTON and not window_times(spec.config, spec.analysis.smoothing_window):
            raise ConfigError("averaging window holds no bins; increase t_max or smoothing_window",
                              key="smoothing_window")

    # helpers

    def _save(self, table: pd.DataFrame, output_path: str, extra: Optional[dict] = None):
        metadata = self.output_handler.build_metadata(self.spec, time.time() - self._start, extra)
        self.output_handler.save_table(table, output_path, metadata)

    def _covering(self, t_needed: float) -> SimConfig:
        """Config whose bin grid has a bin starting at t_needed."""
        config = self.spec.config
        if t_needed < config.n_bins * config.bin_width - 1e-9 * config.bin_width:
            return config
        t_max = (math.floor(t_needed / config.bin_width + 1e-9) + 1) * config.bin_width
        logger.info(f"Extending t_max from {config.t_max:g} to {t_max:g} to cover t={t_needed:g}")
        return config.replace(t_max=t_max)

    def _params_for(self, alpha_sq: float) -> CavityParams:
        params = self.spec.params
        return CavityParams.from_alpha_sq(
            alpha_sq,
            phi=params.phi,
            eta=params.eta,
            beta=None if self.spec.beta_auto else params.beta,
            kappa=params.kappa,
            feedback_convention=self.spec.feedback_convention,
        )

    def _phases(self) -> List[float]:
        return list(self.spec.sweep) if self.spec.sweep is not None else [self.spec.params.phi]

    # handlers

    def run_steady_state(self) -> int:
        alpha = steady_state_alpha(self.spec.params)
        print(format_complex(alpha))
        table = pd.DataFrame([{"alpha_re": alpha.real, "alpha_im": alpha.imag, "abs_sq": abs(alpha) ** 2}])
        self._save(table, self.spec.output_path)
        return EXIT_OK

    def run_phase_diagram(self) -> int:
        spec = self.spec
        times = list(spec.analysis.snapshot_times)
        config = self._covering(max(times))
        tables = {}
        for forced in (False, True):
            table = phase_diagram_snapshot(self._phases(), spec.params, config, times,
                                           forced_feedback_at_zero=forced, workers=spec.workers)
            tables[forced] = table
            out = with_suffix(spec.output_path, "forced") if forced else spec.output_path
            self._save(table.assign(phi=table["phi"] / math.pi), out,
                       {"forced_feedback_at_zero": forced, "phi_units": "pi"})

        spread = phase_space_spread(tables[False]).rename(columns={"spread": "spread_unforced"})
        spread["spread_forced"] = phase_space_spread(tables[True])["spread"].to_numpy()
        self._save(spread, with_suffix(spec.output_path, "spread"))
        growing = np.all(np.diff(spread["spread_unforced"].to_numpy()) > 0)
        faster = np.all(spread["spread_forced"].to_numpy()[1:] > spread["spread_unforced"].to_numpy()[1:])
        logger.info(f"Phase-space spread grows monotonically: {bool(growing)}; "
                    f"forced run spreads faster at every later time: {bool(faster)}")
        return EXIT_OK

    def run_intensity(self) -> int:
        spec = self.spec
        estimator = spec.analysis.resolved_estimator()
        frames = []
        for phi in self._phases():
            params = spec.params.replace(phi=phi)
            table = intensity_curve(run_ensemble(params, spec.config, workers=spec.workers), params, estimator)
            if spec.sweep is not None:
                table.insert(0, "phi", phi / math.pi)
            frames.append(table)
        self._save(pd.concat(frames, ignore_index=True), spec.output_path, {"estimator": estimator.value})
        return EXIT_OK

    def run_g2(self) -> int:
        spec = self.spec
        estimator = spec.analysis.resolved_estimator()
        frames = []
        for phi in self._phases():
            params = spec.params.replace(phi=phi)
            unconditional = run_ensemble(params, spec.config, workers=spec.workers)
            conditional = conditional_ensemble(params, spec.config, spec.workers)
            table = g2_curve(conditional, unconditional, estimator, kappa=params.kappa)
            if spec.sweep is not None:
                table.insert(0, "phi", phi / math.pi)
            frames.append(table)
        self._save(pd.concat(frames, ignore_index=True), spec.output_path, {"estimator": estimator.value})
        return EXIT_OK

    def _time_scan(self) -> Tuple[pd.DataFrame, SimConfig]:
        spec = self.spec
        times = list(spec.sweep) if spec.sweep is not None else None
        config = self._covering(max(times)) if times else spec.config
        points = accuracy_time_scan(spec.analysis.signal, spec.params.phi, spec.params, config,
                                    times, spec.analysis, spec.workers)
        return accuracy_table(points), config

    def _accuracy_extra(self) -> dict:
        analysis = self.spec.analysis
        return {
            "signal": analysis.signal.value,
            "estimator": analysis.resolved_estimator().value,
            "dphi_pi": analysis.dphi / math.pi,
        }

    def run_accuracy_time(self) -> int:
        table, _ = self._time_scan()
        self._save(table, self.spec.output_path, {**self._accuracy_extra(), "resource": "T"})
        return EXIT_OK

    def run_accuracy_photon(self) -> int:
        spec = self.spec
        sweep = spec.sweep or DEFAULT_PHOTON_SWEEP
        table = accuracy_photon_scan(spec.analysis.signal, spec.params.phi,
                                     [(a, self._params_for(a)) for a in sweep],
                                     spec.config, spec.analysis, spec.workers)
        extra = {**self._accuracy_extra(), "resource": "alpha_sq",
                 "smoothing_window": spec.analysis.smoothing_window}
        self._save(table, spec.output_path, extra)
        return EXIT_OK

    def run_accuracy_grid(self) -> int:
        spec = self.spec
        sweep = spec.sweep or DEFAULT_GRID_SWEEP
        table = accuracy_grid(spec.analysis.signal, spec.params.phi,
                              [(a, self._params_for(a)) for a in sweep],
                              spec.config, scan_times(spec.config), spec.analysis, spec.workers)
        self._save(table, spec.output_path, self._accuracy_extra())
        return EXIT_OK

    def run_scaling_fit(self) -> int:
        spec, analysis = self.spec, self.spec.analysis
        if spec.input_path:
            points = self.output_handler.load_table(spec.input_path)
            fit_range = (analysis.fit_min, analysis.fit_max)
            extra = {"input_path": spec.input_path}
        else:
            points, _ = self._time_scan()
            self._save(points, with_suffix(spec.output_path, "points"), {**self._accuracy_extra(), "resource": "T"})
            fit_min = DEFAULT_FIT_T_MIN if analysis.fit_min is None else analysis.fit_min
            fit_max = analysis.fit_max
            if fit_max is None and analysis.fit_to_minimum:
                fit_max = falling_branch_end(points, FIT_MINIMUM_SMOOTHING, fit_min)
                if fit_max is not None:
                    logger.info(f"Fitting T in [{fit_min:g}, {fit_max:g}], up to the smoothed accuracy minimum")
            fit_range = (fit_min, fit_max)
            extra = {**self._accuracy_extra(), "fit_min": fit_min, "fit_max": fit_max}
        fit = power_law_fit(points, fit_range)
        print(f"exponent = {fit.exponent:.4f} (r^2 = {fit.r_squared:.4f}, {fit.n_points} points)")
        self._save(fit_table(fit), spec.output_path, extra)
        return EXIT_OK

    def run_oracle_validate(self) -> int:
        spec = self.spec
        checkpoints = sorted(spec.oracle.checkpoints)
        config = self._covering(max(checkpoints))
        trajectory = ensemble_photon_number(run_ensemble(spec.params, config, workers=spec.workers), checkpoints)
        dim = spec.oracle.dim or default_dimension(spec.params)
        oracle = photon_number_curve(
            spec.params, checkpoints, dim=dim, dt=spec.oracle.dt,
            leakage_threshold=spec.oracle.leakage_threshold,
            measurement_drive=config.measurement_drive,
        )
        table = pd.DataFrame({
            "t": trajectory["t"],
            "oracle_n": [oracle[t] for t in checkpoints],
            "trajectory_n": trajectory["mean_n"],
            "stderr": trajectory["stderr"],
        })
        combined = np.sqrt(table["stderr"] ** 2 + ORACLE_TOLERANCE ** 2)
        table["z_score"] = (table["trajectory_n"] - table["oracle_n"]) / combined
        table["agree"] = table["z_score"].abs() <= ORACLE_Z_LIMIT
        self._save(table, spec.output_path, {"dim": dim, "oracle_dt": spec.oracle.dt})

        verdict = bool(table["agree"].all())
        print(f"oracle agreement: {'PASS' if verdict else 'FAIL'} "
              f"(max |z| = {table['z_score'].abs().max():.2f} at dim={dim})")
        if not verdict:
            logger.error("Trajectory ensemble disagrees with the Fock-basis oracle")
            return EXIT_RUNTIME
        return EXIT_OK

    def _kraus_pair(self) -> KrausPair:
        name = self.spec.kraus.pair
        if name == "random":
            return KrausPair.random(np.random.default_rng(self.spec.config.master_seed))
        return KrausPair.projective() if name == "projective" else KrausPair.swap()

    def run_kraus_demo(self) -> int:
        pair = self._kraus_pair()
        n = self.spec.kraus.n
        psi = (pair.xi0 + pair.xi1) / math.sqrt(2)
        sequential = sequential_measurement_distribution(pair, psi, n)
        state = product_basis_vector(pair, entangled_equivalent_state(pair, psi, n), n)
        entangled = single_shot_distribution(pair, state, n)
        table = pd.DataFrame({
            "outcome": list(sequential),
            "sequential": list(sequential.values()),
            "entangled": [entangled[k] for k in sequential],
        })
        self._save(table, self.spec.output_path, {"kraus_pair": self.spec.kraus.pair, "rounds": n})

        shown = ", ".join(f"{k}:{v:g}" for k, v in sequential.items() if v > KRAUS_AGREEMENT_TOL)
        print(f"sequential {{{shown}}}")
        shown = ", ".join(f"{k}:{v:g}" for k, v in entangled.items() if v > KRAUS_AGREEMENT_TOL)
        print(f"entangled  {{{shown}}}")
        worst = max(abs(sequential[k] - entangled[k]) for k in sequential)
        if worst > KRAUS_AGREEMENT_TOL:
            logger.error(f"Kraus distributions differ by {worst:.2e}")
            return EXIT_RUNTIME
        return EXIT_OK


def run_experiment(spec: ExperimentSpec, output_handler: Optional[OutputHandler] = None) -> int:
    """Run one experiment; returns the process exit status."""
    return ExperimentRunner(spec, output_handler).run()
