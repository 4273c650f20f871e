"""Shared fixtures for the simulator tests."""
import math
import sys
from pathlib import Path

import pytest

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.models import CavityParams, SimConfig  # noqa: E402


@pytest.fixture
def base_params():
    """|alpha_ss|^2 = 4, eta = 0.5, beta = |alpha_ss| at phi = 0.3 pi."""
    return CavityParams.from_alpha_sq(4.0, phi=0.3 * math.pi, eta=0.5)


@pytest.fixture
def small_config():
    return SimConfig(n_traj=400, t_max=0.5, block_size=64, master_seed=7)


@pytest.fixture
def make_config():
    def build(**changes):
        base = dict(n_traj=400, t_max=0.5, block_size=64, master_seed=7)
        base.update(changes)
        return SimConfig(**base)
    return build
