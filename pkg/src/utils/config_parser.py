"""Parser for line-oriented experiment configs.

Format: `key = value` lines, optional `[section]` headers, `#` comments.
Phase-like values (phi, dphi, phase sweeps) are given in units of pi.
"""
import logging
import math
import re
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Tuple

from pydantic import ValidationError

from config import DEFAULT_BLOCK_SIZE, DEFAULT_WORKERS, OUTPUT_DIR
from src.models import (
    SWEEP_QUANTITY,
    AnalysisOptions,
    CavityParams,
    ExperimentKind,
    ExperimentSpec,
    FeedbackConvention,
    IntensityEstimator,
    KrausDemoOptions,
    OracleOptions,
    SignalKind,
    SimConfig,
    Stepping,
    UncertaintyMode,
    _to_complex,
    default_beta,
)

logger = logging.getLogger(__name__)

SECTION_PATTERN = re.compile(r"^\[\s*([A-Za-z_]\w*)\s*\]$")
ENTRY_PATTERN = re.compile(r"^([A-Za-z_]\w*)\s*=\s*(.*)$")

SECTION_KEYS = {
    "experiment": {
        "kind", "preset", "sweep", "signal", "estimator", "uncertainty", "dphi",
        "fit_min", "fit_max", "fit_to_minimum", "smoothing_window", "bootstrap_samples", "checkpoints",
        "kraus", "kraus_n", "input_path",
    },
    "cavity": {"kappa", "alpha_sq", "omega", "phi", "eta", "beta", "feedback_convention"},
    "simulation": {
        "dt", "t_max", "trajectories", "seed", "mode", "sample_stride", "bin_width",
        "block_size", "workers", "measurement_drive", "dim", "oracle_dt", "leakage_threshold",
    },
    "output": {"out"},
}
KEY_SECTION = {key: section for section, keys in SECTION_KEYS.items() for key in keys}

PRESETS = {
    "standard": {"alpha_sq": "4", "eta": "0.5", "trajectories": "1000000"},
    "desk": {"alpha_sq": "4", "eta": "0.5", "trajectories": "10000"},
}

MODES = {
    "fixed": Stepping.FIXED_STEP,
    "fixed_step": Stepping.FIXED_STEP,
    "event": Stepping.EVENT_DRIVEN,
    "event_driven": Stepping.EVENT_DRIVEN,
}

# Default phase grid of the phase diagram, units of pi
PHASE_DIAGRAM_PHIS = [0.5 + 0.125 * k for k in range(9)]


class ConfigError(ValueError):
    """Invalid experiment configuration, located by line and key where possible."""

    def __init__(self, message: str, line: Optional[int] = None, key: Optional[str] = None):
        self.line = line
        self.key = key
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class _Entries:
    """Raw key -> (value, line) table with typed, located accessors."""

    def __init__(self, values: Dict[str, Tuple[str, Optional[int]]]):
        self.values = values

    def __contains__(self, key: str) -> bool:
        return key in self.values

    def line(self, key: str) -> Optional[int]:
        return self.values[key][1] if key in self.values else None

    def get(self, key: str, convert: Callable[[str], Any], default: Any = None) -> Any:
        if key not in self.values:
            return default
        raw, line = self.values[key]
        try:
            return convert(raw)
        except (ValueError, TypeError) as e:
            raise ConfigError(f"invalid value '{raw}' ({e})", line, key) from None


def _int(raw: str) -> int:
    value = float(raw)
    if not value.is_integer():
        raise ValueError("expected an integer")
    return int(value)


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true or false")


def _floats(raw: str) -> List[float]:
    values = [float(v) for v in raw.split(",") if v.strip()]
    if not values:
        raise ValueError("expected a comma-separated list of numbers")
    return values


def _choice(options) -> Callable[[str], str]:
    def convert(raw: str) -> str:
        value = raw.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(sorted(options))}")
        return value
    return convert


def _read_lines(text: str) -> Dict[str, Tuple[str, int]]:
    entries: Dict[str, Tuple[str, int]] = {}
    section = None
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        header = SECTION_PATTERN.match(line)
        if header:
            section = header.group(1).lower()
            if section not in SECTION_KEYS:
                raise ConfigError(f"unknown section [{section}]", number)
            continue
        entry = ENTRY_PATTERN.match(line)
        if not entry:
            raise ConfigError(f"expected 'key = value', got '{line}'", number)
        key, value = entry.group(1).lower(), entry.group(2).strip()
        if key not in KEY_SECTION:
            raise ConfigError("unknown key", number, key)
        if section is not None and KEY_SECTION[key] != section:
            raise ConfigError(f"belongs in [{KEY_SECTION[key]}], not [{section}]", number, key)
        if key in entries:
            raise ConfigError(f"duplicate key (first set on line {entries[key][1]})", number, key)
        if value == "":
            raise ConfigError("missing value", number, key)
        entries[key] = (value, number)
    return entries


def _raise_located(error: ValidationError, entries: _Entries, field_keys: Dict[str, str]):
    """Turn the first pydantic error into a ConfigError pointing at the config line."""
    first = error.errors()[0]
    field = str(first["loc"][0]) if first["loc"] else None
    key = field_keys.get(field, field) if field else None
    message = first["msg"]
    raise ConfigError(message, entries.line(key) if key else None, key) from None


def parse_config(text: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentSpec:
    """
    Parse a config file into a validated ExperimentSpec.

    Args:
        text: Config file contents
        overrides: Key -> value pairs that replace config entries (command-line flags)

    Returns:
        ExperimentSpec with every default filled in

    Raises:
        ConfigError: On syntax errors, unknown or duplicate keys and invalid values
    """
    raw = _read_lines(text)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key not in KEY_SECTION:
            raise ConfigError("unknown override", key=key)
        raw[key] = (str(value), None)

    preset_entries = _Entries(raw)
    preset = preset_entries.get("preset", _choice(PRESETS), "standard")
    merged = {k: (v, None) for k, v in PRESETS[preset].items()}
    merged.update(raw)
    entries = _Entries(merged)

    kind_name = entries.get("kind", _choice({k.value for k in ExperimentKind}))
    if kind_name is None:
        raise ConfigError("missing required key", key="kind")
    kind = ExperimentKind(kind_name)

    params, beta_auto, convention = _build_params(entries, raw)
    config = _build_sim_config(entries)
    analysis = _build_analysis(entries)

    sweep = entries.get("sweep", _floats)
    if sweep is not None and SWEEP_QUANTITY.get(kind) == "phi":
        sweep = [v * math.pi for v in sweep]
    if sweep is None and kind is ExperimentKind.PHASE_DIAGRAM:
        sweep = [v * math.pi for v in PHASE_DIAGRAM_PHIS]

    checkpoints = entries.get("checkpoints", _floats)
    oracle_fields = {
        "dim": entries.get("dim", _int),
        "dt": entries.get("oracle_dt", float),
        "leakage_threshold": entries.get("leakage_threshold", float),
        "checkpoints": checkpoints,
    }
    kraus_fields = {
        "pair": entries.get("kraus", _choice({"swap", "projective", "random"})),
        "n": entries.get("kraus_n", _int),
    }
    try:
        oracle = OracleOptions(**{k: v for k, v in oracle_fields.items() if v is not None})
        kraus = KrausDemoOptions(**{k: v for k, v in kraus_fields.items() if v is not None})
    except ValidationError as e:
        _raise_located(e, entries, {"dt": "oracle_dt", "pair": "kraus", "n": "kraus_n"})
    if checkpoints is not None:
        analysis = analysis.model_copy(update={"snapshot_times": checkpoints})

    out = entries.get("out", str, str(OUTPUT_DIR / f"{kind.value}.csv"))
    try:
        spec = ExperimentSpec(
            kind=kind,
            params=params,
            config=config,
            sweep=sweep,
            output_path=out,
            input_path=entries.get("input_path", str),
            workers=entries.get("workers", _int, DEFAULT_WORKERS),
            beta_auto=beta_auto,
            feedback_convention=convention,
            analysis=analysis,
            oracle=oracle,
            kraus=kraus,
        )
    except ValidationError as e:
        _raise_located(e, entries, {"output_path": "out"})
    _check_output_path(Path(spec.output_path), entries.line("out"))
    logger.info(f"Parsed '{kind.value}' experiment (preset {preset}, {config.n_traj} trajectories)")
    return spec


def _build_params(entries: _Entries, user: Dict[str, Tuple[str, Optional[int]]]
                  ) -> Tuple[CavityParams, bool, FeedbackConvention]:
    kappa = entries.get("kappa", float, 1.0)
    # a command-line alpha_sq (no line number) wins over a config-file omega
    alpha_sq_flag = "alpha_sq" in user and user["alpha_sq"][1] is None
    if "omega" in user and "alpha_sq" in user and not alpha_sq_flag:
        raise ConfigError("give either omega or alpha_sq, not both", entries.line("omega"), "omega")
    if "omega" in user and not alpha_sq_flag:
        omega = entries.get("omega", float)
        amplitude_key = "omega"
    else:
        alpha_sq = entries.get("alpha_sq", float)
        if alpha_sq < 0:
            raise ConfigError("must be non-negative", entries.line("alpha_sq"), "alpha_sq")
        omega = kappa * math.sqrt(alpha_sq) if kappa > 0 else 0.0
        amplitude_key = "alpha_sq"

    convention = FeedbackConvention(
        entries.get("feedback_convention", _choice({c.value for c in FeedbackConvention}), "amplitude")
    )
    beta_raw = entries.get("beta", str, "auto")
    beta_auto = beta_raw.strip().lower() == "auto"
    if beta_auto:
        amplitude = omega / kappa if kappa > 0 else 0.0
        beta = default_beta(amplitude, convention)
    else:
        beta = entries.get("beta", _to_complex)

    try:
        params = CavityParams(
            kappa=kappa,
            omega=omega,
            phi=entries.get("phi", float, 0.0) * math.pi,
            eta=entries.get("eta", float),
            beta=beta,
        )
    except ValidationError as e:
        _raise_located(e, entries, {"omega": amplitude_key})
    return params, beta_auto, convention


def _build_sim_config(entries: _Entries) -> SimConfig:
    fields = {
        "dt": entries.get("dt", float),
        "t_max": entries.get("t_max", float),
        "n_traj": entries.get("trajectories", _int),
        "master_seed": entries.get("seed", _int),
        "stepping": entries.get("mode", lambda raw: MODES[_choice(MODES)(raw)]),
        "sample_stride": entries.get("sample_stride", float),
        "bin_width": entries.get("bin_width", float),
        "block_size": entries.get("block_size", _int, DEFAULT_BLOCK_SIZE),
        "measurement_drive": entries.get("measurement_drive", _bool),
    }
    try:
        return SimConfig(**{k: v for k, v in fields.items() if v is not None})
    except ValidationError as e:
        keys = {"n_traj": "trajectories", "master_seed": "seed", "stepping": "mode"}
        first = e.errors()[0]
        if not first["loc"]:
            # model-level check: point at the mode line, which selects the rule set
            raise ConfigError(first["msg"], entries.line("mode") or entries.line("dt"), "mode") from None
        _raise_located(e, entries, keys)


def _build_analysis(entries: _Entries) -> AnalysisOptions:
    uncertainty = entries.get("uncertainty", _choice({"trajectory_std", "bootstrap", "auto"}), "auto")
    fields = {
        "signal": entries.get("signal", _choice({s.value for s in SignalKind})),
        "estimator": entries.get("estimator", _choice({e.value for e in IntensityEstimator})),
        "uncertainty": None if uncertainty == "auto" else UncertaintyMode(uncertainty),
        "dphi": entries.get("dphi", lambda raw: float(raw) * math.pi),
        "fit_min": entries.get("fit_min", float),
        "fit_max": entries.get("fit_max", float),
        "fit_to_minimum": entries.get("fit_to_minimum", _bool),
        "smoothing_window": entries.get("smoothing_window", float),
        "bootstrap_samples": entries.get("bootstrap_samples", _int),
    }
    try:
        return AnalysisOptions(**{k: v for k, v in fields.items() if v is not None})
    except ValidationError as e:
        first = e.errors()[0]
        if not first["loc"]:
            key = "fit_min" if "fit_min" in first["msg"] else "uncertainty"
            raise ConfigError(first["msg"], entries.line(key), key) from None
        _raise_located(e, entries, {})


def _check_output_path(path: Path, line: Optional[int]):
    parent = path.parent if str(path.parent) else Path(".")
    if parent.exists() and not parent.is_dir():
        raise ConfigError(f"output directory {parent} is not a directory", line, "out")
    if path.exists() and path.is_dir():
        raise ConfigError(f"output path {path} is a directory", line, "out")
