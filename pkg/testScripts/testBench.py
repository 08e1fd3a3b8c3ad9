import csv
import json
import math

import numpy as np
import pytest
from PIL import Image

import bench
from bench import ExperimentConfig
from matcore import ConfigError





def _config(tmp_path, **fields):
    fields.setdefault("output_dir", str(tmp_path / "out"))
    return ExperimentConfig.from_dict(fields)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --- configuration ----------------------------------------------------------

def test_config_defaults_and_dash_names(tmp_path):
    cfg = _config(tmp_path, experiment="noise-bias")
    assert cfg.experiment == "noise_bias"
    assert cfg.continuous is False
    assert cfg.trials_or(200) == 200
    assert cfg.to_dict()["schemes"] == ["glorot_normal"]


@pytest.mark.parametrize("fields", [
    {"experiment": "spectrum", "colour": "blue"},
    {"n": 3},
    {"experiment": "histogram"},
    {"experiment": "spectrum", "schemes": ["he_normal"]},
    {"experiment": "spectrum", "schemes": ["gershgorin_euler"]},
    {"experiment": "spectrum", "n": 2.5},
    {"experiment": "spectrum", "trials": 0},
    {"experiment": "spectrum", "dt": -0.1},
    {"experiment": "convergence", "n": 3, "r": 3},
    {"experiment": "convergence", "n": 4, "r": 2, "m": 3},
    {"experiment": "noise_bias", "trials": 50},
    {"experiment": "noise_bias", "r": 1},
    {"experiment": "remedies", "n": 6, "r": 3, "m": 64},
    {"experiment": "remedies", "n": 6, "r": 3, "m": 16, "sigma": 0.1},
    {"experiment": "rollout", "r": 2, "m": 8},
    {"experiment": "rollout", "energies": [1.0]},
    {"experiment": "spectrum", "learning_rate": None},
    {"experiment": "spectrum", "bound": True},
    {"experiment": "spectrum", "window": "wide"},
    {"experiment": "convergence", "unstable_init": "1.2"},
    {"experiment": "noise_bias", "sigma_grid": [0.1, None]},
    {"experiment": "spectrum", "output_dir": 3},
])
def test_config_rejects_bad_fields(fields):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(fields)


def test_load_config_fills_and_checks_experiment(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"n": 4, "trials": 10}))
    cfg = bench.load_config(path, experiment="spectrum", overrides={"base_seed": 5})
    assert cfg.experiment == "spectrum"
    assert cfg.base_seed == 5

    path.write_text(json.dumps({"experiment": "rollout"}))
    with pytest.raises(ConfigError, match="rollout"):
        bench.load_config(path, experiment="spectrum")

    path.write_text("{not json")
    with pytest.raises(ConfigError):
        bench.load_config(path)
    with pytest.raises(ConfigError):
        bench.load_config(tmp_path / "missing.json")


def test_derive_seed_separates_components():
    seeds = {bench.derive_seed(7, c) for c in range(5)}
    assert len(seeds) == 5
    assert bench.derive_seed(7, bench.NOISE, 1) != bench.derive_seed(7, bench.STATE)
    assert bench.derive_seed(3, bench.DATA) == bench.derive_seed(3, bench.DATA)


def test_run_trials_keeps_order():
    assert bench.run_trials(lambda s: s * s, 10, 5, workers=3) == [100, 121, 144, 169, 196]


# --- stability and rollout ----------------------------------------------------

def test_classify_stability():
    assert bench.classify_stability(0.5 * np.eye(2), "discrete")
    assert not bench.classify_stability(np.eye(2), "discrete")
    assert bench.classify_stability(-np.eye(2), "continuous_euler", dt=0.1)
    assert not bench.classify_stability(-np.eye(2), "continuous_euler", dt=3.0)
    assert not bench.classify_stability(np.zeros((2, 2)), "continuous_euler")
    with pytest.raises(ConfigError):
        bench.classify_stability(np.eye(2), "hybrid")


def test_rollout_contracting_map():
    rows, diverged = bench.rollout(0.5 * np.eye(2), [1.0, 0.0], 3)
    assert not diverged
    assert [row[1] for row in rows] == [1.0, 0.5, 0.25, 0.125]
    assert rows[-1][2:] == [0.125, 0.0]


def test_rollout_stops_at_divergence():
    rows, diverged = bench.rollout(2.0 * np.eye(2), [1.0, 0.0], 50, bound=1e3)
    assert diverged
    assert rows[-1][0] == 10
    assert len(rows) == 11


def test_rollout_rotation_and_euler():
    c, s = math.cos(0.3), math.sin(0.3)
    rows, diverged = bench.rollout([[c, -s], [s, c]], [0.6, 0.8], 100)
    assert not diverged
    np.testing.assert_allclose([row[1] for row in rows], 1.0, rtol=1e-12)

    rows, _ = bench.rollout(-np.eye(1), [1.0], 2, mode="continuous_euler", dt=0.5)
    assert [row[1] for row in rows] == [1.0, 0.5, 0.25]
    with pytest.raises(ConfigError):
        bench.rollout(-np.eye(1), [1.0], 2, mode="continuous_euler")


# --- writers ----------------------------------------------------------------

def test_csv_format(tmp_path):
    path = bench.write_csv(tmp_path / "t.csv", ["a", "b", "c", "d"],
                           [[0.1, 3, True, "x"], [np.float64(1.0) / 3, np.int64(2), False, "y"]])
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "a,b,c,d"
    assert lines[1] == "0.10000000000000001,3,true,x"
    assert float(lines[2].split(",")[0]) == 1.0 / 3
    assert lines[2].endswith(",2,false,y")


def test_metadata_written_before_and_after(tmp_path):
    cfg = _config(tmp_path, experiment="spectrum", n=3, trials=5, bins=9)
    artifacts = bench.run_experiment(cfg)
    meta = json.loads(artifacts.metadata_path.read_text())
    for key in ("config", "base_seed", "derived_seed_rule", "version", "started_at",
                "wall_seconds", "seeds"):
        assert key in meta
    assert meta["version"] == bench.VERSION
    assert meta["config"]["trials"] == 5
    assert meta["wall_seconds"] >= 0.0
    assert meta["seeds"]["glorot_normal/n=3"] == [0, 4]


# --- experiments --------------------------------------------------------------

def test_spectrum_gershgorin_never_spills(tmp_path):
    cfg = _config(tmp_path, experiment="spectrum", schemes=["gershgorin_discrete"], n=16,
                  trials=50, bins=11)
    artifacts = bench.run_experiment(cfg)
    summary = _rows(tmp_path / "out" / "spectrum_summary.csv")
    assert len(summary) == 1
    assert summary[0]["scheme"] == "gershgorin_discrete"
    assert float(summary[0]["phi"]) == 0.0
    assert float(summary[0]["max_modulus"]) < 1.0

    hist = _rows(tmp_path / "out" / "spectrum_gershgorin_discrete_n16.csv")
    assert len(hist) == 11 * 11
    assert sum(int(row["count"]) for row in hist) == 16 * 50
    assert len(artifacts.csv_paths) == 2


def test_spectrum_is_reproducible_across_workers(tmp_path):
    runs = []
    for workers in (1, 2):
        out = tmp_path / f"w{workers}"
        cfg = _config(tmp_path, experiment="spectrum", n_values=[3, 5], trials=40,
                      base_seed=9, bins=15, workers=workers, output_dir=str(out))
        bench.run_experiment(cfg)
        runs.append(out)
    for name in ("spectrum_glorot_normal_n3.csv", "spectrum_glorot_normal_n5.csv",
                 "spectrum_summary.csv"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes()


def test_spectrum_pictures(tmp_path):
    cfg = _config(tmp_path, experiment="spectrum", n=4, trials=20, bins=21,
                  emit_svg=True, emit_png=True)
    artifacts = bench.run_experiment(cfg)
    names = sorted(p.name for p in artifacts.picture_paths)
    assert names == ["spectrum_glorot_normal_n4.png", "spectrum_glorot_normal_n4.svg"]
    svg = (tmp_path / "out" / "spectrum_glorot_normal_n4.svg").read_text()
    assert svg.startswith("<svg") and "stroke-dasharray" in svg
    with Image.open(tmp_path / "out" / "spectrum_glorot_normal_n4.png") as img:
        assert img.size == (453, 473)


def test_convergence_zero_direction_frozen_without_noise(tmp_path):
    cfg = _config(tmp_path, experiment="convergence", n=3, r=2, m=64,
                  tau_grid=[0.0, 10.0, 50.0])
    bench.run_experiment(cfg)
    rows = _rows(tmp_path / "out" / "convergence.csv")
    assert {row["variant"] for row in rows} == {"clean"}
    zero = [row for row in rows if row["direction_id"] == "zero_1"]
    assert len(zero) == 3
    for row in zero:
        assert float(row["diagonal_entry"]) == pytest.approx(1.2, abs=1e-10)
        assert float(row["column_error"]) == pytest.approx(0.0, abs=1e-10)

    fast = [float(row["column_error"]) for row in rows if row["direction_id"] == "energy_1"]
    assert fast[0] > 0.5
    assert fast[-1] < 1e-12


def test_convergence_noise_pulls_zero_direction_down(tmp_path):
    cfg = _config(tmp_path, experiment="convergence", n=3, r=2, m=256, sigma=0.5,
                  tau_grid=[0.0, 25.0, 100.0])
    bench.run_experiment(cfg)
    rows = _rows(tmp_path / "out" / "convergence.csv")
    noisy = [row for row in rows
             if row["variant"] == "noisy" and row["direction_id"] == "zero_1"]
    assert float(noisy[0]["diagonal_entry"]) == pytest.approx(1.2, abs=1e-10)
    assert abs(float(noisy[-1]["diagonal_entry"])) < 0.5
    eigs = _rows(tmp_path / "out" / "convergence_eigs.csv")
    assert len(eigs) == 2 * 3 * 3


def test_noise_bias_matches_prediction(tmp_path):
    m, sigma = 200, 0.1
    # second direction carries exactly the noise energy m * sigma^2
    cfg = _config(tmp_path, experiment="noise_bias", n=3, r=2, m=m,
                  energies=[2.0, math.sqrt(m * sigma ** 2)], sigma_grid=[0.0, sigma],
                  trials=400, base_seed=1)
    bench.run_experiment(cfg)
    rows = _rows(tmp_path / "out" / "noise_bias.csv")
    assert len(rows) == 2 * 3

    clean = [row for row in rows if float(row["sigma"]) == 0.0]
    for row in clean[:2]:
        assert float(row["empirical_mean_factor"]) == pytest.approx(1.0, abs=1e-8)
        assert float(row["predicted_factor"]) == 1.0

    noisy = {row["direction"]: row for row in rows if float(row["sigma"]) == sigma}
    assert float(noisy["2"]["predicted_factor"]) == pytest.approx(0.5, abs=1e-9)
    assert float(noisy["1"]["predicted_factor"]) == pytest.approx(4.0 / 6.0, abs=1e-9)
    for direction in ("1", "2"):
        row = noisy[direction]
        assert float(row["empirical_mean_factor"]) == pytest.approx(
            float(row["predicted_factor"]), rel=0.05)


def test_noise_bias_continuous_unlearnable_additive(tmp_path):
    dt = 0.1
    cfg = _config(tmp_path, experiment="noise_bias", n=3, r=2, m=200, dt=dt, sigma=0.1)
    bench.run_experiment(cfg)
    rows = _rows(tmp_path / "out" / "noise_bias.csv")
    zero = next(row for row in rows if row["direction"] == "3")
    assert float(zero["predicted_additive"]) == -1.0 / dt
    assert float(zero["empirical_additive"]) == pytest.approx(-1.0 / dt, rel=0.05)


def test_remedies_arms(tmp_path):
    cfg = _config(tmp_path, experiment="remedies", n=6, r=3, m=64, sigma=0.1, trials=200,
                  steps=100)
    bench.run_experiment(cfg)
    rows = _rows(tmp_path / "out" / "remedies.csv")
    by_arm = {arm: [row for row in rows if row["arm"] == arm] for arm in bench.REMEDY_ARMS}
    assert all(len(arm_rows) == 200 for arm_rows in by_arm.values())

    assert all(row["stable"] == "true" for row in by_arm["gershgorin"])
    assert all(row["rollout_diverged"] == "false" for row in by_arm["gershgorin"])
    assert max(float(row["spectrum_error"]) for row in by_arm["projection"]) < 1e-6
    assert any(row["stable"] == "false" for row in by_arm["glorot"])
    for row in by_arm["selective_noise"]:
        assert float(row["learnable_factor"]) == pytest.approx(1.0, abs=1e-6)

    summary = {row["arm"]: row for row in _rows(tmp_path / "out" / "remedies_summary.csv")}
    assert int(summary["gershgorin"]["stable_count"]) == 200
    assert int(summary["glorot"]["stable_count"]) < 200


def test_rollout_experiment(tmp_path):
    cfg = _config(tmp_path, experiment="rollout", n=3, r=2, m=64, trials=3, steps=40,
                  schemes=["glorot_normal", "gershgorin_discrete"])
    artifacts = bench.run_experiment(cfg)
    assert [p.name for p in artifacts.csv_paths] == ["rollout.csv", "rollout_summary.csv"]
    summary = _rows(tmp_path / "out" / "rollout_summary.csv")
    assert len(summary) == 6
    for row in summary:
        if row["scheme"] == "gershgorin_discrete":
            assert float(row["spectral_radius"]) < 1.0
            assert row["diverged"] == "false"
    steps = [row for row in _rows(tmp_path / "out" / "rollout.csv")
             if row["scheme"] == "gershgorin_discrete" and row["seed"] == "0"]
    assert [int(row["step"]) for row in steps] == list(range(41))


def test_remedies_whitening_matters_only_at_finite_tau(tmp_path):
    def arms(tau, out):
        cfg = _config(tmp_path, experiment="remedies", n=6, r=3, m=64, sigma=0.1, trials=5,
                      steps=20, tau=tau, output_dir=str(tmp_path / out))
        bench.run_experiment(cfg)
        rows = _rows(tmp_path / out / "remedies.csv")
        return ([row for row in rows if row["arm"] == "glorot"],
                [row for row in rows if row["arm"] == "whitened"])

    glorot, whitened = arms(None, "inf")
    for g, w in zip(glorot, whitened):
        assert float(w["spectral_radius_learned"]) == pytest.approx(
            float(g["spectral_radius_learned"]), rel=1e-6)
        assert w["stable"] == g["stable"]

    glorot, whitened = arms(5.0, "finite")
    assert any(abs(float(g["learnable_error"]) - float(w["learnable_error"])) > 1e-3
               for g, w in zip(glorot, whitened))


def test_noise_bias_stderr_shrinks_with_trials(tmp_path):
    stderr = {}
    for trials in (100, 400):
        out = tmp_path / f"t{trials}"
        cfg = _config(tmp_path, experiment="noise_bias", n=3, r=2, m=200, sigma=0.1,
                      energies=[2.0, 1.5], trials=trials, output_dir=str(out))
        bench.run_experiment(cfg)
        rows = _rows(out / "noise_bias.csv")
        stderr[trials] = np.array([float(row["stderr"]) for row in rows[:2]])
    ratio = stderr[100] / stderr[400]
    assert np.all((ratio > 2.0 * 0.7) & (ratio < 2.0 * 1.3))


def test_trajectory_experiments_need_whole_trajectories():
    with pytest.raises(ConfigError, match="multiple"):
        ExperimentConfig.from_dict({"experiment": "rollout", "m": 60})
    with pytest.raises(ConfigError, match="multiple"):
        ExperimentConfig.from_dict({"experiment": "remedies", "n": 6, "r": 3, "m": 68,
                                    "sigma": 0.1})


def test_config_type_errors_name_the_field():
    with pytest.raises(ConfigError, match="sigma"):
        ExperimentConfig.from_dict({"experiment": "spectrum", "sigma": "abc"})
    with pytest.raises(ConfigError, match="n_values"):
        ExperimentConfig.from_dict({"experiment": "spectrum", "n_values": [2.5]})
    # JSON integers are fine where numbers are expected
    cfg = ExperimentConfig.from_dict({"experiment": "convergence", "dt": 1, "sigma": 0,
                                      "tau_grid": [0, 1.5]})
    assert cfg.continuous
