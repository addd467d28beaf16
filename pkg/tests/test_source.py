import math

import numpy as np
import pytest

from toeplitz_qrng.entropy import AdcGeometry
from toeplitz_qrng.randtests import autocorrelation
from toeplitz_qrng.source import (
    RawSource,
    SimConfig,
    empirical_autocorrelation_profile,
    quantum_variance,
    simulate_phase,
    simulate_raw,
)

N_PHASE = 10**6


def lag1_cov(x):
    x = x - x.mean()
    return float(np.dot(x[:-1], x[1:]) / len(x))


@pytest.fixture(scope="module")
def big_taps():
    return RawSource(SimConfig(rng_seed=7)).read_taps(10**7)


def test_frozen_phase_gives_zero_differences():
    assert not simulate_phase(SimConfig(phase_diffusion=0.0), 1000).any()


def test_phase_variance_matches_diffusion():
    cfg = SimConfig(rng_seed=1)
    dphi = simulate_phase(cfg, N_PHASE)
    target = cfg.phase_variance
    assert target == pytest.approx(0.5)
    # Gaussian: Var(sample variance) = 2 sigma^4 / N
    se = math.sqrt(2.0 / N_PHASE) * target
    assert abs(dphi.var() - target) < 3 * se


def test_disjoint_windows_are_uncorrelated():
    cfg = SimConfig(rng_seed=2)
    dphi = simulate_phase(cfg, N_PHASE)
    g0 = cfg.phase_variance
    assert abs(lag1_cov(dphi)) < 4 * g0 / math.sqrt(N_PHASE)


def test_overlapping_windows_share_increments():
    cfg = SimConfig(sample_rate=2e9, rng_seed=3)
    dphi = simulate_phase(cfg, N_PHASE)
    g0 = cfg.phase_variance
    g1 = 2 * cfg.phase_diffusion * 0.3e-9
    assert g1 == pytest.approx(0.1875)
    # Bartlett variance of the lag-1 sample covariance when only lags 0 and 1 are nonzero
    se = math.sqrt((g0**2 + 3 * g1**2) / N_PHASE)
    assert abs(lag1_cov(dphi) - g1) < 4 * se


def test_tau_must_sit_on_substep_grid():
    with pytest.raises(ValueError, match="substeps"):
        SimConfig(tau=0.83e-9)
    with pytest.raises(ValueError):
        SimConfig(substeps_per_sample=1)


def test_silent_source_sits_on_mid_scale_code():
    cfg = SimConfig(amplitude=0.0, phase_diffusion=0.0, gamma=math.inf)
    rec = simulate_raw(cfg, 5000)
    assert rec.count == 5000
    assert set(rec.samples.tolist()) == {128}


def test_sample_variance_is_sum_of_parts(big_taps):
    cfg = SimConfig(rng_seed=7)
    adc = cfg.adc
    mv = adc.to_mv(big_taps["codes"])
    qvar = quantum_variance(cfg)
    expected = qvar + qvar / cfg.gamma
    assert mv.var() == pytest.approx(expected, rel=0.05)


def test_empirical_gamma_matches_config(big_taps):
    g = big_taps["quantum"].var() / big_taps["classical"].var()
    assert g == pytest.approx(SimConfig().gamma, rel=0.03)


def test_saturation_is_rare(big_taps):
    codes = big_taps["codes"]
    assert codes.min() >= 0 and codes.max() <= 255
    assert np.mean((codes == 0) | (codes == 255)) < 1e-3


def test_lowpass_keeps_gamma():
    src = RawSource(SimConfig(detector_bandwidth=2e8, rng_seed=4))
    taps = src.read_taps(500_000)
    g = taps["quantum"].var() / taps["classical"].var()
    assert g == pytest.approx(6.87, rel=0.03)


def test_reproducible_and_slice_independent():
    cfg = SimConfig(rng_seed=11)
    a = simulate_raw(cfg, 200_000)
    assert a.tobytes() == simulate_raw(cfg, 200_000).tobytes()
    src = RawSource(cfg)
    parts = np.concatenate([src.read(n) for n in (1, 999, 70_000, 129_000)])
    assert np.array_equal(parts, a.samples)
    assert simulate_raw(SimConfig(rng_seed=12), 1000).tobytes() != a.samples[:1000].tobytes()
    assert a.config_hash == cfg.digest()


def test_raw_autocorrelation_small_without_overlap():
    n = 10**6
    rec = simulate_raw(SimConfig(rng_seed=5), n)
    r = empirical_autocorrelation_profile(rec, 20)
    assert np.all(np.abs(r) < 5 / math.sqrt(n))


def test_raw_autocorrelation_large_with_overlap():
    n = 10**6
    rec = simulate_raw(SimConfig(sample_rate=2e9, rng_seed=5), n)
    r = empirical_autocorrelation_profile(rec, 5)
    assert r[0] > 10 / math.sqrt(n)
    assert np.allclose(r, autocorrelation(rec.samples, 5))


def test_config_roundtrip():
    cfg = SimConfig(adc=AdcGeometry(full_scale=500.0), rng_seed=99)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.digest() != SimConfig().digest()
