"""Self-contained property suite behind the `validate` CLI subcommand.

Each check re-derives its expectations independently (randomized inputs,
Monte-Carlo draws, numeric Hessians) and reports pass/fail with the seed
needed to reproduce a failure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .majorization import is_majorized
from .montecarlo import SimConfig, nu_gain_correlation, simulate_nu, simulate_rate
from .oea import oea, verify_most_majorized
from .optimizer import (Scenario, certify_optimality, check_policy_feasible,
                        greedy_policy, optimize_joint_general,
                        optimize_rx_only)
from .profiles import EHProfile, synthetic_exponential
from .rate_models import (IntervalAllocation, RateModelParams, bound_u_value,
                          bound_ub_value, nu_expected, nu_upper, rate_exact,
                          rate_upper_u, rate_upper_ub)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seed: int


def _hessian_max_eig(fn, x0: np.ndarray, h: float = 1e-4) -> float:
    n = x0.size
    hess = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            xpp = x0.copy(); xpp[i] += h; xpp[j] += h
            xpm = x0.copy(); xpm[i] += h; xpm[j] -= h
            xmp = x0.copy(); xmp[i] -= h; xmp[j] += h
            xmm = x0.copy(); xmm[i] -= h; xmm[j] -= h
            val = (fn(xpp) - fn(xpm) - fn(xmp) + fn(xmm)) / (4 * h * h)
            hess[i, j] = val
            hess[j, i] = val
    return float(np.max(np.linalg.eigvalsh(hess)))


def check_bound_chain(samples: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(samples):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=200.0)
        p = rng.uniform(0.01, 100.0)
        tau = rng.uniform(0.0, 200.0)
        q = rng.uniform(0.0, 100.0) if tau > 0 else 0.0
        a = IntervalAllocation(p=p, q=q, tau=tau)
        re_ = rate_exact(a, params)
        ru = rate_upper_u(a, params)
        rub = rate_upper_ub(a, params)
        worst = max(worst, re_ - ru, ru - rub)
        if re_ > ru + 1e-7 or ru > rub + 1e-7:
            return CheckResult("bound_chain", False,
                               f"violated at M={m} p={p} q={q} tau={tau}", seed)
    return CheckResult("bound_chain", True,
                       f"{samples} samples, worst slack {worst:.2e}", seed)


def check_concavity(samples: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(samples):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=200.0)
        p = rng.uniform(0.1, 50.0)
        q = rng.uniform(0.5, 50.0)
        tau = rng.uniform(10.0, 180.0)
        eig_u = _hessian_max_eig(
            lambda x: float(bound_u_value(p, x[0], x[1], params)),
            np.array([q, tau]))
        eig_ub = _hessian_max_eig(
            lambda x: float(bound_ub_value(x[0], x[1], x[2], params)),
            np.array([p, q, tau]))
        worst = max(worst, eig_u, eig_ub)
        if eig_u > 1e-6 or eig_ub > 1e-6:
            return CheckResult("concavity", False,
                               f"eig {max(eig_u, eig_ub):.2e} at "
                               f"M={m} p={p} q={q} tau={tau}", seed)
    return CheckResult("concavity", True,
                       f"{samples} points, max eigenvalue {worst:.2e}", seed)


def check_oea(samples: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    n_profiles = max(2, samples // 20)
    for i in range(n_profiles):
        k = int(rng.integers(2, 21))
        e = rng.uniform(0.0, 10.0, k) * (rng.random(k) > 0.15)
        alloc = oea(e)
        levels = alloc.levels
        if not np.all(np.diff(levels) > 0):
            return CheckResult("oea", False, f"band levels not increasing: {e}",
                               seed)
        if not verify_most_majorized(alloc, e, samples=min(200, samples * 2),
                                     seed=seed + i):
            return CheckResult("oea", False, f"not most majorized: {e}", seed)
    return CheckResult("oea", True,
                       f"{n_profiles} profiles certified", seed)


def check_quantization_mc(samples: int, seed: int) -> CheckResult:
    draws = max(20000, samples * 1000)
    for m in (2, 3):
        for b in (0, 1, 3):
            cfg = SimConfig(seed=seed, draws=draws, M=m, b=b)
            mean, se = simulate_nu(cfg)
            expect = nu_expected(b, m)
            if abs(mean - expect) > 4 * se:
                return CheckResult(
                    "quantization_mc", False,
                    f"M={m} b={b}: sim {mean:.5f} vs {expect:.5f} "
                    f"({abs(mean-expect)/se:.1f} SE)", seed)
            if mean > nu_upper(b, m) + 3 * se:
                return CheckResult("quantization_mc", False,
                                   f"M={m} b={b}: bound violated", seed)
    corr = nu_gain_correlation(SimConfig(seed=seed, draws=draws, M=3, b=2))
    if abs(corr) > 4.0 / np.sqrt(draws):
        return CheckResult("quantization_mc", False,
                           f"nu/gain correlation {corr:.2e}", seed)
    return CheckResult("quantization_mc", True,
                       f"{draws} draws per config", seed)


def check_rate_mc(samples: int, seed: int) -> CheckResult:
    draws = max(20000, samples * 1000)
    params = RateModelParams(M=4, T=200.0)
    tau = 2.0
    q = tau * (2 ** (4 / tau) - 1.0)
    a = IntervalAllocation(p=1.0, q=q, tau=tau)
    mean, se = simulate_rate(a, params, SimConfig(seed=seed, draws=draws, M=4))
    exact = rate_exact(a, params)
    if abs(mean - exact) > 4 * se:
        return CheckResult("rate_mc", False,
                           f"sim {mean:.5f} vs exact {exact:.5f} "
                           f"({abs(mean-exact)/se:.1f} SE)", seed)
    return CheckResult("rate_mc", True,
                       f"{draws} draws, {abs(mean-exact)/se:.2f} SE apart", seed)


def check_certificates(samples: int, seed: int) -> CheckResult:
    rng = np.random.default_rng(seed)
    n_scen = max(2, samples // 20)
    for i in range(n_scen):
        k = int(rng.integers(2, 9))
        params = RateModelParams(M=4, T=200.0)
        if i % 2 == 0:
            prof = synthetic_exponential(k, 3000.0, 25.0, seed=seed + i,
                                         L=10, T=200.0)
            s = Scenario(profile=prof, params=params, tx_mode="harvesting")
            pol = optimize_joint_general(s)
        else:
            e_r = rng.uniform(0.0, 40.0, k) * 10
            prof = EHProfile(np.zeros(k), e_r, L=10, T=200.0, delta=3600.0)
            s = Scenario(profile=prof, params=params,
                         tx_mode="constant_power", p_const=10.0)
            pol = optimize_rx_only(s)
        if not check_policy_feasible(pol, s):
            return CheckResult("certificates", False,
                               f"infeasible policy, scenario {i}", seed)
        cert = certify_optimality(pol, s)
        if not cert.all_passed:
            return CheckResult(
                "certificates", False,
                f"scenario {i}: monotone={cert.monotone} "
                f"buffers={cert.buffer_emptying} "
                f"terminal={cert.terminal_equality} "
                f"violations={cert.monotone_violations + cert.buffer_violations}",
                seed)
    return CheckResult("certificates", True, f"{n_scen} scenarios", seed)


ALL_CHECKS = [check_bound_chain, check_concavity, check_oea,
              check_quantization_mc, check_rate_mc, check_certificates]


def run_suite(samples: int, seed: int) -> list[CheckResult]:
    return [fn(samples, seed) for fn in ALL_CHECKS]


def validate_policy_file(pol, s: Scenario) -> list[CheckResult]:
    """Feasibility and certificates for an explicit policy."""
    results = []
    feasible = check_policy_feasible(pol, s)
    detail = "prefix constraints and terminal equality hold" if feasible else \
        "energy-neutrality or terminal equality violated"
    results.append(CheckResult("policy_feasible", feasible, detail, 0))
    cert = certify_optimality(pol, s)
    bad = sorted(set(cert.monotone_violations) | set(cert.buffer_violations))
    detail = ("all certificates hold" if cert.all_passed else
              f"certificate failure at interval index(es) "
              f"{[k + 1 for k in bad]}"
              f" (monotone={cert.monotone}, buffers={cert.buffer_emptying},"
              f" terminal={cert.terminal_equality})")
    results.append(CheckResult("policy_certificates", cert.all_passed,
                               detail, 0))
    return results
