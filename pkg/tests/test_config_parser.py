"""Tests for the experiment config parser."""
import math

import pytest

from config import DEFAULT_WORKERS
from src.models import ExperimentKind, SignalKind, Stepping, UncertaintyMode
from src.utils.config_parser import ConfigError, parse_config

G2_CONFIG = """\
# g2 at the standard working point
kind = g2

[cavity]
phi = 1
alpha_sq = 4
eta = 0.5

[simulation]
t_max = 2
"""


def test_standard_config_fills_defaults(tmp_path):
    spec = parse_config(G2_CONFIG, {"out": str(tmp_path / "g2.csv")})
    assert spec.kind is ExperimentKind.G2
    assert spec.params.phi == pytest.approx(math.pi)
    assert spec.params.omega == pytest.approx(2.0)
    assert spec.params.beta == 2 + 0j
    assert spec.config.n_traj == 1_000_000
    assert spec.config.dt == 1e-3
    assert spec.config.bin_width == 0.01
    assert spec.config.stepping is Stepping.FIXED_STEP
    assert spec.analysis.dphi == pytest.approx(0.002 * math.pi)
    assert spec.workers == DEFAULT_WORKERS
    assert spec.beta_auto


def test_desk_preset_and_overrides(tmp_path):
    text = "kind = intensity\npreset = desk\n"
    spec = parse_config(text, {"out": str(tmp_path / "i.csv")})
    assert spec.config.n_traj == 10_000
    spec = parse_config(text, {"out": str(tmp_path / "i.csv"), "trajectories": 50, "seed": 9})
    assert spec.config.n_traj == 50
    assert spec.config.master_seed == 9


def test_invalid_value_is_located():
    with pytest.raises(ConfigError) as info:
        parse_config("kind = g2\n[cavity]\neta = 1.5\n")
    assert info.value.line == 3
    assert info.value.key == "eta"
    assert "line 3" in str(info.value)


@pytest.mark.parametrize("text, line, key", [
    ("kind = g2\nkind = intensity\n", 2, "kind"),
    ("kind = g2\ncolour = red\n", 2, "colour"),
    ("kind = g2\n[simulation]\nphi = 1\n", 3, "phi"),
    ("kind = g2\ntrajectories = many\n", 2, "trajectories"),
    ("kind = g2\nt_max =\n", 2, "t_max"),
])
def test_bad_entries(text, line, key):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert info.value.line == line
    assert info.value.key == key


def test_syntax_errors():
    with pytest.raises(ConfigError) as info:
        parse_config("kind = g2\nthis is not a pair\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError):
        parse_config("[nowhere]\nkind = g2\n")
    with pytest.raises(ConfigError):
        parse_config("alpha_sq = 4\n")


def test_omega_and_alpha_sq_conflict():
    with pytest.raises(ConfigError) as info:
        parse_config("kind = g2\nomega = 2\nalpha_sq = 4\n")
    assert info.value.key == "omega"


def test_command_line_alpha_sq_wins_over_omega(tmp_path):
    spec = parse_config("kind = g2\nomega = 2\n", {"alpha_sq": 9.0, "out": str(tmp_path / "g.csv")})
    assert spec.params.omega == pytest.approx(3.0)


def test_fixed_step_limit_points_at_mode():
    with pytest.raises(ConfigError) as info:
        parse_config("kind = intensity\n[simulation]\nmode = fixed\ndt = 0.05\n")
    assert info.value.key == "mode"
    assert info.value.line == 3


def test_sweep_rules(tmp_path):
    out = {"out": str(tmp_path / "x.csv")}
    spec = parse_config("kind = intensity\nsweep = 0.5, 1\n", out)
    assert spec.sweep == pytest.approx([0.5 * math.pi, math.pi])
    spec = parse_config("kind = accuracy_photon\nsweep = 1, 4, 9\n", out)
    assert spec.sweep == [1.0, 4.0, 9.0]
    spec = parse_config("kind = phase_diagram\n", out)
    assert spec.sweep[0] == pytest.approx(0.5 * math.pi)
    assert spec.sweep[-1] == pytest.approx(1.5 * math.pi)
    with pytest.raises(ConfigError):
        parse_config("kind = steady_state\nsweep = 1, 2\n", out)


def test_beta_forms(tmp_path):
    out = {"out": str(tmp_path / "x.csv")}
    spec = parse_config("kind = g2\nbeta = 1, 0.5\n", out)
    assert spec.params.beta == 1 + 0.5j
    assert not spec.beta_auto
    spec = parse_config("kind = g2\nfeedback_convention = quadrature\n", out)
    assert spec.params.beta == pytest.approx(-2j)


def test_analysis_keys(tmp_path):
    text = ("[experiment]\nkind = accuracy_time\nsignal = g2\nuncertainty = auto\n"
            "dphi = 0.01\nbootstrap_samples = 40\n")
    spec = parse_config(text, {"out": str(tmp_path / "a.csv")})
    assert spec.analysis.signal is SignalKind.G2
    assert spec.analysis.resolved_uncertainty() is UncertaintyMode.BOOTSTRAP
    assert spec.analysis.dphi == pytest.approx(0.01 * math.pi)
    assert spec.analysis.bootstrap_samples == 40
    with pytest.raises(ConfigError) as info:
        parse_config("kind = accuracy_time\nsignal = g2\nuncertainty = trajectory_std\n")
    assert info.value.key == "uncertainty"


def test_checkpoints_feed_oracle_and_snapshots(tmp_path):
    spec = parse_config("kind = oracle_validate\ncheckpoints = 0.2, 0.4\n", {"out": str(tmp_path / "o.csv")})
    assert spec.oracle.checkpoints == [0.2, 0.4]
    assert spec.analysis.snapshot_times == [0.2, 0.4]


def test_output_path_must_not_be_a_directory(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("kind = g2\n", {"out": str(tmp_path)})
