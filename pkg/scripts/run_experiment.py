"""Command-line entry point: run one configured cavity-feedback experiment."""
import argparse
import sys
from pathlib import Path

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.experiment_pipeline import EXIT_CONFIG, run_experiment
from src.utils.config_parser import ConfigError, parse_config


class _ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1 like configuration errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _ArgumentParser(description="Quantum-jump simulation of a cavity under photon-detection feedback")
    p.add_argument("--config", type=str, default=None,
                   help="Experiment config file (key = value lines with [sections])")
    p.add_argument("--kind", type=str, default=None,
                   help="Experiment kind, overriding the config file")
    p.add_argument("--seed", type=int, default=None,
                   help="Master seed of the trajectory streams")
    p.add_argument("--trajectories", type=int, default=None,
                   help="Number of trajectories per ensemble")
    p.add_argument("--phi", type=float, default=None,
                   help="Unknown phase in units of pi")
    p.add_argument("--alpha-sq", type=float, default=None,
                   help="Prepared mean photon number |alpha_ss|^2")
    p.add_argument("--eta", type=float, default=None,
                   help="Detector efficiency")
    p.add_argument("--beta", type=str, default=None,
                   help="Feedback displacement RE[,IM] or 'auto'")
    p.add_argument("--t-max", type=float, default=None,
                   help="Duration of the measurement stage (units of 1/kappa)")
    p.add_argument("--dt", type=float, default=None,
                   help="Fixed-step time step")
    p.add_argument("--mode", choices=["fixed", "event"], default=None,
                   help="Stepping mode")
    p.add_argument("--workers", type=int, default=None,
                   help="Worker processes (default: CAVFEED_WORKERS or 1)")
    p.add_argument("--out", type=str, default=None,
                   help="Output CSV path")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    text = ""
    if args.config:
        config_path = Path(args.config)
        if not config_path.exists():
            print(f"ERROR: Config file not found: {config_path}", file=sys.stderr)
            return EXIT_CONFIG
        try:
            text = config_path.read_text(encoding="utf-8")
        except (UnicodeDecodeError, OSError) as e:
            print(f"ERROR: Cannot read config file {config_path}: {e}", file=sys.stderr)
            return EXIT_CONFIG

    overrides = {
        "kind": args.kind,
        "seed": args.seed,
        "trajectories": args.trajectories,
        "phi": args.phi,
        "alpha_sq": args.alpha_sq,
        "eta": args.eta,
        "beta": args.beta,
        "t_max": args.t_max,
        "dt": args.dt,
        "mode": args.mode,
        "workers": args.workers,
        "out": args.out,
    }
    try:
        spec = parse_config(text, overrides)
    except ConfigError as e:
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run_experiment(spec)


if __name__ == "__main__":
    sys.exit(main())
