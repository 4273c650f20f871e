"""Output handler for saving experiment tables."""
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from src.models import ExperimentSpec

logger = logging.getLogger(__name__)


class OutputHandler:
    """Handler for saving experiment outputs as CSV with a metadata header."""

    def __init__(self):
        self.written: List[Path] = []

    def save_table(
        self,
        table: pd.DataFrame,
        output_path: str,
        metadata: Dict[str, Any],
    ) -> Path:
        """
        Save a result table to CSV.

        Args:
            table: Result rows; NaN and None are written as empty fields
            output_path: Path to save CSV
            metadata: Written first as '# key: value' comment lines

        Returns:
            Path of the written file
        """
        path = Path(output_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.written.append(path)
        with open(path, "w", newline="", encoding="utf-8") as handle:
            for key, value in metadata.items():
                handle.write(f"# {key}: {value}\n")
            table.to_csv(handle, index=False, na_rep="")
        logger.info(f"Saved {len(table)} rows to {path}")
        return path

    def load_table(self, input_path: str) -> pd.DataFrame:
        """Read a table written by save_table (comment header skipped)."""
        path = Path(input_path)
        if not path.exists():
            raise FileNotFoundError(f"input table not found: {path}")
        return pd.read_csv(path, comment="#")

    def remove_partial_outputs(self):
        """Delete every file written so far (used when an experiment fails)."""
        for path in self.written:
            if path.exists():
                path.unlink()
                logger.warning(f"Removed partial output {path}")
        self.written = []

    def build_metadata(
        self,
        spec: ExperimentSpec,
        wall_time: float,
        extra: Optional[Dict[str, Any]] = None,
    ) -> Dict[str, Any]:
        """Run parameters, seed, mode, trajectory count and wall time for the CSV header."""
        params, config = spec.params, spec.config
        metadata = {
            "kind": spec.kind.value,
            "kappa": params.kappa,
            "omega": params.omega,
            "alpha_sq": params.alpha_ss_abs ** 2,
            "phi_pi": params.phi / math.pi,
            "eta": params.eta,
            "beta": f"{params.beta.real:g},{params.beta.imag:g}",
            "seed": config.master_seed,
            "mode": config.stepping.value,
            "trajectories": config.n_traj,
            "dt": config.dt,
            "t_max": config.t_max,
            "bin_width": config.bin_width,
            "block_size": config.block_size,
            "measurement_drive": config.measurement_drive,
        }
        if spec.sweep is not None:
            metadata["sweep"] = spec.sweep_quantity
        metadata.update(extra or {})
        metadata["wall_time_s"] = f"{wall_time:.3f}"
        metadata["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
        return metadata
