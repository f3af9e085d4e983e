import numpy as np
import pytest

from ehfo.montecarlo import (SimConfig, nu_gain_correlation, simulate_nu,
                             simulate_rate)
from ehfo.rate_models import (IntervalAllocation, RateModelParams,
                              feedback_bits, nu_expected, nu_upper,
                              rate_exact)

PARAMS = RateModelParams(M=4, T=200.0)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(seed=0, draws=0, M=4)
    with pytest.raises(ValueError):
        SimConfig(seed=0, draws=10, M=1)
    with pytest.raises(ValueError):
        SimConfig(seed=0, draws=10, M=2, b=17)


def test_seed_determinism():
    cfg = SimConfig(seed=123, draws=40_000, M=3, b=2)
    assert simulate_nu(cfg) == simulate_nu(cfg)
    a = IntervalAllocation(p=1.0, q=6.0, tau=2.0)
    r1 = simulate_rate(a, PARAMS, SimConfig(seed=9, draws=30_000, M=4))
    r2 = simulate_rate(a, PARAMS, SimConfig(seed=9, draws=30_000, M=4))
    assert r1 == r2
    r3 = simulate_rate(a, PARAMS, SimConfig(seed=10, draws=30_000, M=4))
    assert r1 != r3


def test_nu_matches_formula_small():
    for m, b in [(2, 0), (2, 1), (3, 2), (4, 4)]:
        mean, se = simulate_nu(SimConfig(seed=11, draws=150_000, M=m, b=b))
        assert abs(mean - nu_expected(b, m)) <= 3.5 * se
        assert mean <= nu_upper(b, m) + 3 * se


def test_nu_gain_independence():
    cfg = SimConfig(seed=21, draws=200_000, M=3, b=3)
    corr = nu_gain_correlation(cfg)
    assert abs(corr) < 3.0 / np.sqrt(cfg.draws)


def test_standard_error_scaling():
    ses = []
    for draws in (10_000, 100_000, 1_000_000):
        _, se = simulate_nu(SimConfig(seed=5, draws=draws, M=2, b=1))
        ses.append(se * np.sqrt(draws))
    lo, hi = min(ses), max(ses)
    assert hi / lo < 1.3


def test_rate_zero_power_and_prelog():
    assert simulate_rate(IntervalAllocation(p=0.0, q=1.0, tau=5.0), PARAMS,
                         SimConfig(seed=1, draws=10, M=4)) == (0.0, 0.0)
    near_t, _ = simulate_rate(IntervalAllocation(p=1.0, q=1.0, tau=199.5),
                              PARAMS, SimConfig(seed=1, draws=20_000, M=4))
    assert near_t < 0.05


def test_rate_matches_exact_model():
    tau = 2.0
    q = tau * (2.0 ** (4 / tau) - 1.0)
    a = IntervalAllocation(p=1.0, q=q, tau=tau)
    assert feedback_bits(q, tau, 1.0) == pytest.approx(4.0, abs=1e-12)
    mean, se = simulate_rate(a, PARAMS, SimConfig(seed=7, draws=200_000, M=4))
    assert abs(mean - rate_exact(a, PARAMS)) <= 3.5 * se
