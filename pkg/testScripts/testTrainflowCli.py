import json

import pytest

import bench
import trainflow
from matcore import SingularityError





def _write(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload) if not isinstance(payload, str) else payload)
    return str(path)


def test_spectrum_run_succeeds(tmp_path, capsys):
    cfg = _write(tmp_path, {"experiment": "spectrum", "n": 4, "trials": 20, "bins": 11,
                            "output_dir": str(tmp_path / "runs")})
    assert trainflow.main(["spectrum", "--config", cfg]) == trainflow.EXIT_OK
    assert (tmp_path / "runs" / "metadata.json").exists()
    assert (tmp_path / "runs" / "spectrum_summary.csv").exists()
    assert "spectrum:" in capsys.readouterr().out


def test_out_and_seed_override_the_file(tmp_path):
    cfg = _write(tmp_path, {"experiment": "spectrum", "n": 3, "trials": 5, "bins": 7,
                            "base_seed": 1})
    out = tmp_path / "elsewhere"
    code = trainflow.main(["spectrum", "--config", cfg, "--out", str(out), "--seed", "42",
                           "--svg"])
    assert code == trainflow.EXIT_OK
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["base_seed"] == 42
    assert meta["config"]["emit_svg"] is True
    assert (out / "spectrum_glorot_normal_n3.svg").exists()


def test_hyphenated_subcommand_fills_experiment(tmp_path):
    cfg = _write(tmp_path, {"n": 3, "r": 2, "m": 64, "sigma": 0.1, "trials": 100,
                            "output_dir": str(tmp_path / "nb")})
    assert trainflow.main(["noise-bias", "--config", cfg]) == trainflow.EXIT_OK
    assert (tmp_path / "nb" / "noise_bias.csv").exists()


@pytest.mark.parametrize("payload", [
    {"experiment": "spectrum", "shape": "round"},
    {"experiment": "rollout"},
    {"experiment": "spectrum", "schemes": ["he_normal"]},
    "[1, 2, 3]",
    {"experiment": "spectrum", "sigma": "abc"},
    {"experiment": "spectrum", "dt": "0.1"},
    {"experiment": "spectrum", "tau_grid": 5},
    {"experiment": "spectrum", "n_values": [2.5]},
    {"experiment": "spectrum", "schemes": "glorot_normal"},
    {"experiment": "spectrum", "energies": [1.0, "2"]},
    {"experiment": "spectrum", "emit_svg": "yes"},
    {"experiment": "spectrum", "tau": [1.0]},
    "{broken",
])
def test_bad_configs_exit_2(tmp_path, payload):
    cfg = _write(tmp_path, payload)
    assert trainflow.main(["spectrum", "--config", cfg]) == trainflow.EXIT_CONFIG


def test_missing_config_and_negative_seed_exit_2(tmp_path):
    assert trainflow.main(["spectrum", "--config", str(tmp_path / "nope.json")]) == 2
    cfg = _write(tmp_path, {"experiment": "spectrum", "n": 3, "trials": 2})
    assert trainflow.main(["spectrum", "--config", cfg, "--seed", "-1"]) == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    def singular(config):
        raise SingularityError("smallest eigenvalue 0 of YY^T")

    monkeypatch.setattr(bench, "run_experiment", singular)
    cfg = _write(tmp_path, {"experiment": "convergence", "output_dir": str(tmp_path / "c")})
    assert trainflow.main(["convergence", "--config", cfg]) == trainflow.EXIT_NUMERICAL


def test_unknown_subcommand_is_usage_error():
    with pytest.raises(SystemExit) as info:
        trainflow.main(["histogram", "--config", "x.json"])
    assert info.value.code == 2
