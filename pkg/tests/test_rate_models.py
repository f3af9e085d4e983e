import math

import numpy as np
import pytest

from ehfo.numerics import DomainError, expect_gamma
from ehfo.rate_models import (IntervalAllocation, RateModelParams,
                              bound_quantities, bound_u_value, bound_ub_value,
                              feedback_bits, gap_bounds_u,
                              gap_limit_high_power, gap_ub_vs_u, nu_expected,
                              nu_upper, rate_exact, rate_upper_u,
                              rate_upper_ub, round_bits_policy_rate)

PARAMS = RateModelParams(M=4, T=200.0)


def _alloc(p, q, tau):
    return IntervalAllocation(p=p, q=q, tau=tau)


def test_feedback_bits():
    assert feedback_bits(5.0, 5.0, 1.0) == 5.0        # q = tau*sigma2
    assert feedback_bits(0.0, 5.0, 1.0) == 0.0
    assert feedback_bits(6.0, 2.0, 1.0) == 4.0        # 2 uses at log2(4)
    with pytest.raises(DomainError):
        feedback_bits(1.0, 0.0, 1.0)
    with pytest.raises(DomainError):
        feedback_bits(-1.0, 1.0, 1.0)


def test_allocation_validation():
    with pytest.raises(ValueError):
        IntervalAllocation(p=1.0, q=1.0, tau=0.0)   # energy with no duration
    with pytest.raises(ValueError):
        IntervalAllocation(p=-1.0, q=0.0, tau=0.0)
    IntervalAllocation(p=0.0, q=0.0, tau=0.0)


def test_nu_expected():
    for m in (2, 3, 4, 8):
        assert nu_expected(0.0, m) == pytest.approx(1.0 / m, rel=1e-12)
        assert nu_upper(0.0, m) == pytest.approx(1.0 / m, rel=1e-12)
    assert nu_expected(1.0, 2) == pytest.approx(2.0 / 3.0, rel=1e-12)
    assert nu_upper(1.0, 2) == pytest.approx(0.75, rel=1e-12)
    # limit b -> inf is 1, from below
    assert nu_upper(5000.0, 4) == pytest.approx(1.0, abs=1e-12)
    assert nu_expected(5000.0, 4) == pytest.approx(1.0, abs=1e-12)
    # mean never exceeds the universal bound, smooth across the large-b
    # asymptotic switch
    for m in (2, 3, 4, 8):
        prev = 0.0
        for b in np.concatenate([np.linspace(0, 20, 81),
                                 np.linspace(38, 42, 41)]):
            val = nu_expected(float(b), m)
            assert val <= nu_upper(float(b), m) + 1e-12
            assert val >= prev - 1e-12  # monotone in b
            prev = val


def test_bound_extensions_at_zero_tau():
    a = _alloc(1.0, 0.0, 0.0)
    assert rate_upper_u(a, PARAMS) == pytest.approx(1.0, abs=1e-14)
    assert rate_upper_ub(a, PARAMS) == pytest.approx(math.log2(3.0), abs=1e-14)
    # tau -> 0 continuity at fixed q
    for tau in (1e-3, 1e-6, 1e-9):
        val = float(bound_u_value(1.0, 2.0, tau, PARAMS))
        assert val == pytest.approx(1.0, abs=1e-2)
    assert float(bound_u_value(1.0, 2.0, 1e-9, PARAMS)) == pytest.approx(
        1.0, abs=1e-6)


def test_bound_q_zero_collapse():
    # no feedback energy: inner factor collapses and tau only costs pre-log
    t = 1 - 10.0 / 200.0
    a = _alloc(2.0, 0.0, 10.0)
    assert rate_upper_u(a, PARAMS) == pytest.approx(t * math.log2(1 + 2.0 / t),
                                                    rel=1e-14)


def test_bounds_vanish_as_tau_approaches_frame():
    for tau in (199.0, 199.9, 199.999):
        a = _alloc(1.0, 2.0, tau)
        assert rate_upper_ub(a, PARAMS) < 0.12
        assert rate_exact(a, PARAMS) < 0.12
    assert rate_upper_ub(_alloc(1.0, 2.0, 199.999), PARAMS) < 1e-3


def test_rate_exact_zero_power():
    assert rate_exact(_alloc(0.0, 2.0, 10.0), PARAMS) == 0.0


def test_bound_chain_random():
    rng = np.random.default_rng(3)
    for _ in range(300):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=200.0)
        tau = float(rng.uniform(0.0, 200.0))
        q = float(rng.uniform(0.0, 100.0)) if tau > 0 else 0.0
        a = _alloc(float(rng.uniform(0.01, 100.0)), q, tau)
        re_ = rate_exact(a, params)
        ru = rate_upper_u(a, params)
        rub = rate_upper_ub(a, params)
        assert re_ <= ru + 1e-7
        assert ru <= rub + 1e-7
        assert re_ >= 0.0


def test_bound_monotone_in_p_and_q():
    rng = np.random.default_rng(4)
    for _ in range(100):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=200.0)
        p = float(rng.uniform(0.1, 50.0))
        q = float(rng.uniform(0.1, 50.0))
        tau = float(rng.uniform(1.0, 190.0))
        for fn in (bound_u_value, bound_ub_value):
            assert fn(p * 1.01, q, tau, params) > fn(p, q, tau, params)
            assert fn(p, q * 1.01, tau, params) > fn(p, q, tau, params)


def test_t_and_f_ranges():
    rng = np.random.default_rng(6)
    for _ in range(200):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=200.0)
        tau = float(rng.uniform(0.0, 199.9))
        q = float(rng.uniform(0.0, 100.0)) if tau > 0 else 0.0
        t, z, f = bound_quantities(1.0, q, tau, params)
        assert 0.0 < float(t) <= 1.0
        assert 1.0 - 1e-12 <= float(f) <= m + 1e-12


def _hessian_max_eig(fn, x0, h=1e-4):
    n = x0.size
    hess = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            xpp = x0.copy(); xpp[i] += h; xpp[j] += h
            xpm = x0.copy(); xpm[i] += h; xpm[j] -= h
            xmp = x0.copy(); xmp[i] -= h; xmp[j] += h
            xmm = x0.copy(); xmm[i] -= h; xmm[j] -= h
            hess[i, j] = hess[j, i] = \
                (fn(xpp) - fn(xpm) - fn(xmp) + fn(xmm)) / (4 * h * h)
    return float(np.max(np.linalg.eigvalsh(hess)))


def test_concavity_spot_checks():
    rng = np.random.default_rng(8)
    for _ in range(50):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=200.0)
        p = float(rng.uniform(0.1, 50.0))
        q = float(rng.uniform(0.5, 50.0))
        tau = float(rng.uniform(10.0, 180.0))
        eig_u = _hessian_max_eig(
            lambda x: float(bound_u_value(p, x[0], x[1], params)),
            np.array([q, tau]))
        eig_ub = _hessian_max_eig(
            lambda x: float(bound_ub_value(x[0], x[1], x[2], params)),
            np.array([p, q, tau]))
        assert eig_u <= 1e-6
        assert eig_ub <= 1e-6


def test_mixed_partial_positive():
    # d^2 R_ub / dp dq > 0: higher feedback quality raises the marginal
    # value of transmit power
    rng = np.random.default_rng(9)
    h = 1e-4
    for _ in range(100):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=200.0)
        p = float(rng.uniform(0.1, 30.0))
        q = float(rng.uniform(0.5, 30.0))
        tau = float(rng.uniform(5.0, 180.0))
        mixed = (float(bound_ub_value(p + h, q + h, tau, params))
                 - float(bound_ub_value(p + h, q - h, tau, params))
                 - float(bound_ub_value(p - h, q + h, tau, params))
                 + float(bound_ub_value(p - h, q - h, tau, params))) / (4 * h * h)
        assert mixed > 0.0


def test_gap_bounds_sandwich():
    rng = np.random.default_rng(12)
    for _ in range(25):
        m = int(rng.choice([2, 4]))
        params = RateModelParams(M=m, T=200.0)
        a = _alloc(float(rng.uniform(0.1, 20.0)),
                   float(rng.uniform(0.5, 40.0)),
                   float(rng.uniform(2.0, 150.0)))
        lo, hi = gap_bounds_u(a, params)
        gap = rate_upper_u(a, params) - rate_exact(a, params)
        assert lo <= gap + 1e-6
        assert gap <= hi + 1e-6


def test_gap_bounds_converge_to_high_feedback_limit():
    # as b grows both bounds approach t*E[log2((t+pM)/(t+pG))]
    params = RateModelParams(M=4, T=200.0)
    p, tau = 2.0, 20.0
    t = 1 - tau / 200.0
    limit = t * expect_gamma(
        lambda g: np.log2((t + p * 4) / (t + p * g)), 4, params.quad)
    for q, tol in ((1e3, 0.05), (1e5, 0.01)):
        lo, hi = gap_bounds_u(_alloc(p, q, tau), params)
        assert lo == pytest.approx(limit, abs=tol)
        assert hi == pytest.approx(limit, abs=tol)
    # low power: the limit gap vanishes
    small = expect_gamma(
        lambda g: np.log2((1 + 1e-4 * 4) / (1 + 1e-4 * g)), 4, params.quad)
    assert abs(small) < 1e-3


def test_gap_limit_high_power():
    from ehfo.numerics import digamma
    want = 2.0 - digamma(4.0) / math.log(2.0)
    assert gap_limit_high_power(4) == pytest.approx(want, abs=1e-12)
    assert gap_limit_high_power(4) == pytest.approx(0.187761, abs=5e-6)
    vals = [gap_limit_high_power(m) for m in (2, 4, 8, 64, 1024)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-3


def test_gap_ub_vs_u_closed_form():
    rng = np.random.default_rng(13)
    for _ in range(100):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=200.0)
        a = _alloc(float(rng.uniform(0.05, 50.0)),
                   float(rng.uniform(0.0, 50.0)),
                   float(rng.uniform(0.5, 190.0)))
        direct = rate_upper_ub(a, params) - rate_upper_u(a, params)
        assert gap_ub_vs_u(a, params) == pytest.approx(direct, abs=1e-10)


def test_gap_ub_vs_u_limits():
    params = RateModelParams(M=4, T=200.0)
    q, tau = 5.0, 20.0
    t, _, f = bound_quantities(1.0, q, tau, params)
    t, f = float(t), float(f)
    # p -> 0: t*log2(1+f/t) <= log2(1+M)
    v0 = gap_ub_vs_u(_alloc(1e-12, q, tau), params)
    assert v0 == pytest.approx(t * math.log2(1 + f / t), abs=1e-6)
    assert v0 <= math.log2(1 + 4)
    # p -> inf: -t*log2(t), below the analytic maximum log2(e)/e
    vinf = gap_ub_vs_u(_alloc(1e9, q, tau), params)
    assert vinf == pytest.approx(-t * math.log2(t), abs=1e-6)
    assert vinf <= math.log2(math.e) / math.e + 1e-12
    # decreasing in p
    ps = [0.01, 0.1, 1.0, 10.0, 100.0]
    vals = [gap_ub_vs_u(_alloc(p, q, tau), params) for p in ps]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_round_bits_policy_rate():
    # q = 6, tau = 2 gives exactly 4 bits: rounding changes nothing
    a = _alloc(1.0, 6.0, 2.0)
    assert feedback_bits(6.0, 2.0, 1.0) == 4.0
    assert round_bits_policy_rate(a, PARAMS) == rate_exact(a, PARAMS)
    # fractional bits below 1 floor to the no-feedback rate at the same tau
    a_small = _alloc(1.0, 0.3, 3.0)
    assert feedback_bits(0.3, 3.0, 1.0) < 1.0
    no_fb = rate_exact(_alloc(1.0, 0.0, 3.0), PARAMS)
    assert round_bits_policy_rate(a_small, PARAMS) == pytest.approx(
        no_fb, abs=1e-12)
    # flooring can only reduce the rate
    rng = np.random.default_rng(14)
    for _ in range(20):
        a = _alloc(float(rng.uniform(0.1, 20.0)),
                   float(rng.uniform(0.5, 30.0)),
                   float(rng.uniform(1.0, 100.0)))
        assert round_bits_policy_rate(a, PARAMS) <= rate_exact(a, PARAMS) + 1e-9
