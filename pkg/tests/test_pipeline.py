"""End-to-end tests of the experiment runner and the command-line entry point."""
import importlib.util
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import src.experiment_pipeline as pipeline
from src.experiment_pipeline import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, format_complex, run_experiment, with_suffix
from src.utils.config_parser import parse_config
from src.utils.output_handler import OutputHandler

SCRIPT = Path(__file__).parent.parent / "scripts" / "run_experiment.py"


def _load_cli():
    spec = importlib.util.spec_from_file_location("run_experiment_cli", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def _body(path: Path):
    return [line for line in path.read_text().splitlines() if not line.startswith("#")]


def test_format_complex():
    assert format_complex(-2 + 2.4e-16j) == "-2+0i"
    assert format_complex(1.5 - 0.25j) == "1.5-0.25i"
    assert with_suffix("out/run.csv", "forced") == str(Path("out/run_forced.csv"))


def test_steady_state(tmp_path, capsys):
    out = tmp_path / "ss.csv"
    spec = parse_config("kind = steady_state\nomega = 2\nphi = 1\n", {"out": str(out)})
    assert run_experiment(spec) == EXIT_OK
    assert capsys.readouterr().out.strip() == "-2+0i"
    table = OutputHandler().load_table(str(out))
    assert table.loc[0, "alpha_re"] == pytest.approx(-2.0)
    assert table.loc[0, "abs_sq"] == pytest.approx(4.0)
    header = [line for line in out.read_text().splitlines() if line.startswith("#")]
    assert any(line.startswith("# seed:") for line in header)
    assert any(line.startswith("# wall_time_s:") for line in header)


def test_kraus_demo(tmp_path, capsys):
    out = tmp_path / "kraus.csv"
    spec = parse_config("kind = kraus_demo\nkraus = swap\nkraus_n = 2\n", {"out": str(out)})
    assert run_experiment(spec) == EXIT_OK
    printed = capsys.readouterr().out
    assert "01:0.5" in printed and "10:0.5" in printed
    table = pd.read_csv(out, comment="#", dtype={"outcome": str})
    assert table["outcome"].tolist() == ["00", "01", "10", "11"]
    np.testing.assert_allclose(table["sequential"], table["entangled"], atol=1e-12)


def test_oracle_validate_without_detection(tmp_path):
    out = tmp_path / "oracle.csv"
    text = "kind = oracle_validate\nalpha_sq = 1\neta = 0\ntrajectories = 200\nt_max = 1.1\n"
    spec = parse_config(text, {"out": str(out)})
    assert run_experiment(spec) == EXIT_OK
    table = OutputHandler().load_table(str(out))
    assert table["t"].tolist() == pytest.approx([0.1, 0.5, 1.0])
    assert table["agree"].all()
    np.testing.assert_allclose(table["trajectory_n"], np.exp(-table["t"]), rtol=1e-8)


def test_too_small_oracle_basis_is_a_config_error(tmp_path):
    out = tmp_path / "oracle.csv"
    text = "kind = oracle_validate\nalpha_sq = 1\ntrajectories = 20\ndim = 4\n"
    spec = parse_config(text, {"out": str(out)})
    assert run_experiment(spec) == EXIT_CONFIG
    assert not out.exists()


def test_intensity_output_independent_of_workers(tmp_path):
    text = "kind = intensity\ntrajectories = 300\nt_max = 0.3\nblock_size = 64\nseed = 5\n"
    bodies = []
    for workers in (1, 2):
        out = tmp_path / f"intensity_{workers}.csv"
        spec = parse_config(text, {"out": str(out), "workers": workers})
        assert run_experiment(spec) == EXIT_OK
        bodies.append(_body(out))
    assert bodies[0] == bodies[1]


def test_scaling_fit_from_table(tmp_path, capsys):
    points = tmp_path / "points.csv"
    resource = np.array([0.5, 1.0, 2.0, 4.0])
    OutputHandler().save_table(pd.DataFrame({"resource": resource, "delta_phi": 0.2 * resource ** -0.5}),
                               str(points), {"kind": "accuracy_time"})
    out = tmp_path / "fit.csv"
    spec = parse_config(f"kind = scaling_fit\ninput_path = {points}\n", {"out": str(out)})
    assert run_experiment(spec) == EXIT_OK
    assert "exponent = -0.5000" in capsys.readouterr().out
    fit = OutputHandler().load_table(str(out))
    assert fit.loc[0, "exponent"] == pytest.approx(-0.5, abs=1e-10)
    assert fit.loc[0, "n_points"] == 4


def test_partial_outputs_are_removed(tmp_path):
    handler = OutputHandler()
    path = handler.save_table(pd.DataFrame({"a": [1]}), str(tmp_path / "partial.csv"), {})
    assert path.exists()
    handler.remove_partial_outputs()
    assert not path.exists()


def test_cli_steady_state(tmp_path, capsys):
    cli = _load_cli()
    out = tmp_path / "cli.csv"
    assert cli.main(["--kind", "steady_state", "--alpha-sq", "4", "--phi", "1", "--out", str(out)]) == EXIT_OK
    assert capsys.readouterr().out.strip() == "-2+0i"
    assert out.exists()


def test_cli_reports_config_errors(tmp_path, capsys):
    cli = _load_cli()
    config = tmp_path / "bad.cfg"
    config.write_text("kind = g2\n[cavity]\neta = 2\n")
    assert cli.main(["--config", str(config)]) == EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err
    assert cli.main(["--config", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG
    with pytest.raises(SystemExit) as info:
        cli.main(["--mode", "sideways"])
    assert info.value.code == EXIT_CONFIG


def test_undecodable_config_is_a_config_error(tmp_path, capsys):
    cli = _load_cli()
    config = tmp_path / "binary.cfg"
    config.write_bytes(b"kind = g2\n\xff\xfe\x00\n")
    assert cli.main(["--config", str(config)]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert "Cannot read config file" in err and "binary.cfg" in err


def test_numerical_errors_during_a_run_are_runtime_failures(tmp_path, monkeypatch):
    def broken(params):
        raise ValueError("kappa must be positive")

    monkeypatch.setattr(pipeline, "steady_state_alpha", broken)
    out = tmp_path / "ss.csv"
    spec = parse_config("kind = steady_state\nomega = 2\n", {"out": str(out)})
    assert run_experiment(spec) == EXIT_RUNTIME
    assert not out.exists()


def test_runaway_event_driven_run_is_a_runtime_failure(tmp_path):
    out = tmp_path / "intensity.csv"
    text = "kind = intensity\nmode = event\nphi = 0\ntrajectories = 100\nt_max = 2\n"
    assert run_experiment(parse_config(text, {"out": str(out)})) == EXIT_RUNTIME
    assert not out.exists()


def test_bootstrap_with_one_block_is_a_config_error(tmp_path):
    text = "kind = accuracy_time\nsignal = g2\ntrajectories = 50\nblock_size = 100\nt_max = 0.2\n"
    assert run_experiment(parse_config(text, {"out": str(tmp_path / "acc.csv")})) == EXIT_CONFIG
