"""Configuration module for the cavity feedback metrology simulator."""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

# Project root directory
PROJECT_ROOT = Path(__file__).parent

# Parallelism
# You can configure these in two ways:
# 1. Create a .env file with: CAVFEED_WORKERS=8
# 2. Or pass --workers on the command line (the flag wins)
#
# Block size fixes how trajectory indices are grouped for accumulation and
# bootstrap. Changing it changes the floating point merge order, so keep it
# fixed when comparing runs byte for byte.
DEFAULT_WORKERS = int(os.getenv("CAVFEED_WORKERS", "1"))
DEFAULT_BLOCK_SIZE = int(os.getenv("CAVFEED_BLOCK_SIZE", "4096"))

# Logging
LOG_LEVEL = os.getenv("CAVFEED_LOG_LEVEL", "INFO")

# Simulation defaults (times in units of 1/kappa)
DEFAULT_DT = 1e-3
MAX_FIXED_STEP_DT = 0.01
# Event-driven runs abort once a trajectory passes either limit
MAX_EVENT_DRIVEN_PHOTONS = 1e6
MAX_EVENT_ROUNDS = 1_000_000
DEFAULT_BIN_WIDTH = 0.01
DEFAULT_SAMPLE_STRIDE = 0.01
DEFAULT_T_MAX = 2.0
DEFAULT_SEED = 20240601

# Estimator defaults
DEFAULT_DPHI_PI = 0.002          # finite-difference offset, units of pi
DEFAULT_BOOTSTRAP_SAMPLES = 200
NOISE_FLOOR_SIGMAS = 2.0
DEFAULT_FIT_T_MIN = 0.2
# Smoothing window for locating the accuracy minimum that ends the default fit
FIT_MINIMUM_SMOOTHING = 0.2
POOR_FIT_R_SQUARED = 0.9

# Fock oracle defaults
DEFAULT_ORACLE_DT = 2e-3
DEFAULT_LEAKAGE_THRESHOLD = 1e-6
MIN_ORACLE_DIM = 64

# Paths
OUTPUT_DIR = Path(os.getenv("CAVFEED_OUTPUT_DIR", str(PROJECT_ROOT / "output")))

# Create directories if they don't exist
OUTPUT_DIR.mkdir(parents=True, exist_ok=True)
