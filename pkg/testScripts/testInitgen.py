import math

import numpy as np
import pytest

import initgen
import matcore
from initgen import InitScheme
from matcore import ConfigError





def test_scheme_validation():
    with pytest.raises(ConfigError):
        InitScheme("he_normal", 4)
    with pytest.raises(ConfigError):
        InitScheme("gershgorin_discrete", 1)
    with pytest.raises(ConfigError):
        InitScheme("gershgorin_euler", 4)
    assert InitScheme("gershgorin_euler", 4, dt=0.1).label() == "gershgorin_euler(dt=0.1)"


def test_sample_is_deterministic():
    scheme = InitScheme("glorot_uniform", 5)
    assert np.array_equal(initgen.sample_init(scheme, 3), initgen.sample_init(scheme, 3))
    assert not np.array_equal(initgen.sample_init(scheme, 3), initgen.sample_init(scheme, 4))


def test_glorot_normal_variance():
    n = 64
    scheme = InitScheme("glorot_normal", n)
    total = 0.0
    for seed in range(10_000):
        total += float(np.sum(initgen.sample_init(scheme, seed) ** 2))
    assert total / (10_000 * n * n) == pytest.approx(1.0 / n, rel=0.03)


def test_glorot_uniform_bounds():
    M = initgen.sample_init(InitScheme("glorot_uniform", 12), 0)
    assert np.max(np.abs(M)) <= math.sqrt(3.0 / 12)


@pytest.mark.parametrize("seed", range(20))
def test_gershgorin_discrete_inside_unit_disk(seed):
    M = initgen.sample_init(InitScheme("gershgorin_discrete", 7), seed)
    assert np.all(np.diag(M) == 0.0)
    assert matcore.spectral_radius(M) < 1.0
    centres, radii = initgen.gershgorin_disks(M)
    assert np.all(np.abs(centres) + radii < 1.0)


@pytest.mark.parametrize("seed", range(20))
def test_gershgorin_continuous_left_half_plane(seed):
    M = initgen.sample_init(InitScheme("gershgorin_continuous", 9), seed)
    assert np.max(matcore.eig(M).real) <= 1e-12
    centres, radii = initgen.gershgorin_disks(M)
    np.testing.assert_allclose(centres, -radii)


def test_gershgorin_rownorm_rows_sum_to_one():
    M = initgen.sample_init(InitScheme("gershgorin_discrete_rownorm", 6), 2)
    np.testing.assert_allclose(np.abs(M).sum(axis=1), np.ones(6))
    assert matcore.spectral_radius(M) <= 1.0 + 1e-12


def test_gershgorin_euler_inside_euler_disk():
    dt = 0.05
    M = initgen.sample_init(InitScheme("gershgorin_euler", 8, dt=dt), 4)
    np.testing.assert_allclose(np.diag(M), -1.0 / dt)
    vals = matcore.eig(M)
    assert np.max(np.abs(1.0 + vals * dt)) < 1.0
    assert np.max(vals.real) < 0.0


@pytest.mark.parametrize("n", [4, 16, 64])
def test_gershgorin_family_spectra_over_many_samples(n):
    trials = 10_000
    disc = initgen.spectrum_stats(InitScheme("gershgorin_discrete", n), trials, 0)
    assert disc.phi == 0.0
    assert np.count_nonzero(np.abs(disc.eigenvalues) >= 1.0) == 0

    cont = initgen.spectrum_stats(InitScheme("gershgorin_continuous", n), trials, 0,
                                  window=4.0)
    assert np.count_nonzero(cont.eigenvalues.real > 1e-12) == 0

    rownorm = initgen.spectrum_stats(InitScheme("gershgorin_discrete_rownorm", n), trials, 0)
    assert np.max(np.abs(rownorm.eigenvalues)) <= 1.0 + 1e-12


def test_glorot_spillover_shrinks_with_n():
    small = initgen.spectrum_stats(InitScheme("glorot_normal", 8), math.ceil(1e5 / 8), 0)
    large = initgen.spectrum_stats(InitScheme("glorot_normal", 256), math.ceil(1e5 / 256), 0)
    assert small.phi > 0.0
    assert large.phi < small.phi
    assert small.frac_positive_real == pytest.approx(0.5, abs=0.02)
    assert large.frac_positive_real == pytest.approx(0.5, abs=0.02)


def test_glorot_cloud_concentrates_in_unit_disk():
    stats = initgen.spectrum_stats(InitScheme("glorot_normal", 100), 1000, 0)
    assert 0.0 < stats.phi < 0.1
    assert np.quantile(np.abs(stats.eigenvalues), 0.99) < initgen.circular_law_radius(100) + 0.1


def test_histogram_counts_and_clipping(caplog):
    with caplog.at_level("WARNING", logger="initgen"):
        stats = initgen.stats_from_eigenvalues([2.0, 0.5], n=2, trials=1, base_seed=0)
    assert stats.phi == 0.5
    assert stats.counts.sum() == 2
    assert stats.clipped == 1
    assert "clipped" in caplog.text
    # the clipped value lands in the last real bin
    assert stats.counts[-1].sum() == 1


def test_spectrum_counts_sum_to_all_eigenvalues():
    stats = initgen.spectrum_stats(InitScheme("glorot_normal", 5), 200, 7, bins=31)
    assert stats.counts.shape == (31, 31)
    assert stats.counts.sum() == 5 * 200
    assert stats.eigenvalues.shape == (1000,)


def test_spectrum_independent_of_workers():
    scheme = InitScheme("glorot_uniform", 6)
    serial = initgen.spectrum_stats(scheme, 50, 11, workers=1)
    pooled = initgen.spectrum_stats(scheme, 50, 11, workers=4)
    assert np.array_equal(serial.eigenvalues, pooled.eigenvalues)
    assert np.array_equal(serial.counts, pooled.counts)


def test_spectrum_rejects_zero_trials():
    with pytest.raises(ConfigError):
        initgen.spectrum_stats(InitScheme("glorot_normal", 4), 0, 0)


def test_circular_law_radius():
    assert initgen.circular_law_radius(8) == 1.0
    assert initgen.circular_law_radius(8, r=6) == pytest.approx(0.5)
    with pytest.raises(ConfigError):
        initgen.circular_law_radius(4, r=5)
