import numpy as np
import pytest

from ehfo.oea import oea
from ehfo.optimizer import (CertificateReport, ConvergenceError,
                            NotSimilarError, Policy, Scenario,
                            _lmo_assignment, certify_optimality, check_similar,
                            check_policy_feasible, envelope_value,
                            greedy_policy, optimize_joint_general,
                            optimize_joint_similar, optimize_rx_only,
                            policy_objective, solve_tau_star, tau_star_vec)
from ehfo.profiles import EHProfile, synthetic_exponential
from ehfo.rate_models import RateModelParams, bound_u_value, bound_ub_value

T = 200.0
L = 10
PARAMS = RateModelParams(M=4, T=T)


def _scenario(e_t, e_r, mode="harvesting", p_const=None, params=PARAMS):
    prof = EHProfile(np.asarray(e_t, float), np.asarray(e_r, float),
                     L=L, T=T, delta=3600.0)
    return Scenario(profile=prof, params=params, tx_mode=mode,
                    p_const=p_const)


# ---------------------------------------------------------------------------
# feedback-duration roots
# ---------------------------------------------------------------------------

def test_tau_star_conventions():
    assert solve_tau_star(1.0, 0.0, PARAMS, "upper_u") == 0.0
    assert solve_tau_star(0.0, 5.0, PARAMS, "upper_ub") == 0.0
    with pytest.raises(ValueError):
        solve_tau_star(1.0, 1.0, PARAMS, "nope")


def test_tau_star_matches_grid_argmax():
    rng = np.random.default_rng(5)
    grid = np.linspace(0.0, T * (1 - 1e-9), 100_001)
    for _ in range(25):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=T)
        p = float(10 ** rng.uniform(-2, 2))
        q = float(10 ** rng.uniform(-2, 2))
        for bound, fn in (("upper_u", bound_u_value),
                          ("upper_ub", bound_ub_value)):
            ts = solve_tau_star(p, q, params, bound)
            tg = grid[int(np.argmax(fn(p, q, grid, params)))]
            assert abs(ts - tg) <= 1e-3 * T


def test_tau_derivative_single_sign_change():
    from ehfo.optimizer import _du_dtau, _dub_dtau
    rng = np.random.default_rng(6)
    taus = np.linspace(1e-6, T * (1 - 1e-6), 1000)
    for _ in range(200):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=T)
        p = float(10 ** rng.uniform(-2, 2))
        q = float(10 ** rng.uniform(-2, 2))
        for d in (_du_dtau, _dub_dtau):
            signs = np.sign(d(taus, p, q, params))
            assert np.sum(np.abs(np.diff(signs)) > 0) <= 1


def test_tau_star_increases_with_feedback_energy():
    qs = [0.1, 1.0, 10.0, 100.0]
    taus = [solve_tau_star(10.0, q, PARAMS, "upper_u") for q in qs]
    assert all(a < b for a, b in zip(taus, taus[1:]))


# ---------------------------------------------------------------------------
# receiver-only optimizer
# ---------------------------------------------------------------------------

def test_rx_only_constant_profile():
    s = _scenario(np.zeros(4), np.full(4, 20.0), "constant_power", 10.0)
    pol = optimize_rx_only(s)
    assert np.allclose(pol.p, 10.0)
    assert np.allclose(pol.q, 2.0)
    assert np.ptp(pol.tau) < 1e-9
    assert check_policy_feasible(pol, s)


def test_rx_only_staircase_profile():
    s = _scenario(np.zeros(3), np.array([3.0, 0.0, 3.0]) * L,
                  "constant_power", 10.0)
    pol = optimize_rx_only(s)
    assert np.allclose(pol.q, [1.5, 1.5, 3.0])
    assert np.all(np.diff(pol.tau) >= -1e-12)
    assert certify_optimality(pol, s).all_passed


def test_rx_only_beats_greedy():
    rng = np.random.default_rng(7)
    for _ in range(10):
        e_r = rng.uniform(0.0, 40.0, int(rng.integers(2, 10))) * L
        s = _scenario(np.zeros(e_r.size), e_r, "constant_power", 10.0)
        opt = policy_objective(optimize_rx_only(s), PARAMS)
        grd = policy_objective(greedy_policy(s), PARAMS)
        assert opt >= grd - 1e-12


# ---------------------------------------------------------------------------
# similarity and the joint optimizers
# ---------------------------------------------------------------------------

def test_check_similar():
    assert check_similar([1.0, 2, 3], [1.0, 2, 3], L, T)
    assert not check_similar([1.0, 2, 3], [3.0, 0, 3], L, T)
    rng = np.random.default_rng(8)
    for _ in range(50):
        e = rng.uniform(0, 10, 8)
        c = float(10 ** rng.uniform(-1, 1))
        assert check_similar(c * e, e, L, T)


def test_joint_similar_uniform_on_constant_profiles():
    s = _scenario(np.full(5, 4000.0), np.full(5, 30.0))
    pol = optimize_joint_similar(s)
    assert np.ptp(pol.p) < 1e-12 and np.ptp(pol.q) < 1e-12
    assert np.ptp(pol.tau) < 1e-9
    assert certify_optimality(pol, s).all_passed


def test_joint_similar_rejects_dissimilar():
    s = _scenario(np.array([1.0, 2, 3]) * L * T, np.array([3.0, 0, 3]) * L)
    with pytest.raises(NotSimilarError):
        optimize_joint_similar(s)


def test_joint_general_matches_similar():
    rng = np.random.default_rng(9)
    for trial in range(5):
        e = rng.uniform(1.0, 10.0, 6)
        c = float(10 ** rng.uniform(-1, 1))
        s = _scenario(c * e * L * T / 5, e * L)
        o_sim = policy_objective(optimize_joint_similar(s), PARAMS)
        o_gen = policy_objective(optimize_joint_general(s), PARAMS)
        assert abs(o_gen - o_sim) <= 1e-6 * abs(o_sim)


def test_joint_general_small_brute_force():
    rng = np.random.default_rng(10)
    e_t = rng.uniform(5.0, 30.0, 2) * L * T / 10
    e_r = rng.uniform(5.0, 30.0, 2) * L
    s = _scenario(e_t, e_r)
    pol = optimize_joint_general(s)
    obj = policy_objective(pol, PARAMS)
    # coarse brute force over the 2-interval feasible rectangle
    c_t, c_r = e_t / (L * T), e_r / L
    p1 = np.linspace(0, c_t[0], 200)
    q1 = np.linspace(0, c_r[0], 200)
    pg, qg = np.meshgrid(p1, q1, indexing="ij")
    tau1 = tau_star_vec(pg, qg, PARAMS, "upper_ub")
    tau2 = tau_star_vec(c_t.sum() - pg, c_r.sum() - qg, PARAMS, "upper_ub")
    grid_best = float(np.max(
        bound_ub_value(pg, qg, tau1, PARAMS)
        + bound_ub_value(c_t.sum() - pg, c_r.sum() - qg, tau2, PARAMS)))
    assert obj >= grid_best - 1e-9
    assert abs(obj - grid_best) <= 1e-4 * grid_best


def test_joint_general_leading_zero_tx():
    s = _scenario([0.0, 0.0, 8000.0, 6000.0], [10.0, 5.0, 20.0, 40.0])
    pol = optimize_joint_general(s)
    assert np.all(pol.p[:2] == 0.0) and np.all(pol.q[:2] == 0.0)
    assert check_policy_feasible(pol, s)
    assert certify_optimality(pol, s).all_passed


def test_joint_general_zero_rx():
    s = _scenario([4000.0, 2000.0], [0.0, 0.0])
    pol = optimize_joint_general(s)
    assert np.all(pol.q == 0.0) and np.all(pol.tau == 0.0)
    assert certify_optimality(pol, s).all_passed


def test_joint_general_beats_greedy_on_exponential():
    for seed in range(4):
        prof = synthetic_exponential(6, 3000.0, 25.0, seed=seed, L=L, T=T)
        s = Scenario(profile=prof, params=PARAMS, tx_mode="harvesting")
        obj = policy_objective(optimize_joint_general(s), PARAMS)
        grd = policy_objective(greedy_policy(s), PARAMS)
        assert obj >= grd - 1e-12


def test_exchange_inequality():
    # R(p,q) + R(p+d, q+a) > R(p+d, q) + R(p, q+a): allocating power and
    # feedback energy to the same interval beats splitting them
    rng = np.random.default_rng(11)
    for _ in range(50):
        m = int(rng.choice([2, 4, 8]))
        params = RateModelParams(M=m, T=T)
        p = float(rng.uniform(0.05, 20.0))
        q = float(rng.uniform(0.05, 20.0))
        d = float(rng.uniform(0.01, 5.0))
        a = float(rng.uniform(0.01, 5.0))
        r = lambda pp, qq: float(envelope_value(
            np.array([pp]), np.array([qq]), params, "upper_ub")[0])
        lhs = r(p, q) + r(p + d, q + a)
        rhs = r(p + d, q) + r(p, q + a)
        assert lhs > rhs - 1e-9


def test_neighbor_averaging_never_decreases():
    rng = np.random.default_rng(12)
    for _ in range(50):
        p1, p2 = sorted(rng.uniform(0.05, 20.0, 2))
        q1, q2 = sorted(rng.uniform(0.05, 20.0, 2))
        alpha = float(rng.uniform(0.0, 1.0))
        pa = np.array([alpha * p1 + (1 - alpha) * p2,
                       (1 - alpha) * p1 + alpha * p2])
        qa = np.array([alpha * q1 + (1 - alpha) * q2,
                       (1 - alpha) * q1 + alpha * q2])
        before = float(np.sum(envelope_value(np.array([p1, p2]),
                                             np.array([q1, q2]),
                                             PARAMS, "upper_ub")))
        after = float(np.sum(envelope_value(pa, qa, PARAMS, "upper_ub")))
        assert after >= before - 1e-9


def test_lmo_matches_enumeration():
    import itertools
    rng = np.random.default_rng(13)
    for _ in range(30):
        k = int(rng.integers(2, 7))
        coeffs = rng.normal(size=k)
        arrivals = rng.uniform(0.0, 3.0, k)
        assign = _lmo_assignment(coeffs)
        vec = np.zeros(k)
        np.add.at(vec, assign, arrivals)
        best = float(np.dot(coeffs, vec))
        # exhaustive assignment of each arrival to any later interval
        exhaustive = -np.inf
        for combo in itertools.product(*[range(i, k) for i in range(k)]):
            v = np.zeros(k)
            for i, j in enumerate(combo):
                v[j] += arrivals[i]
            exhaustive = max(exhaustive, float(np.dot(coeffs, v)))
        assert best == pytest.approx(exhaustive, abs=1e-12)


def test_returned_policies_are_feasible_with_terminal_equality():
    rng = np.random.default_rng(14)
    for seed in range(5):
        prof = synthetic_exponential(5, 2000.0, 30.0, seed=seed, L=L, T=T)
        s = Scenario(profile=prof, params=PARAMS, tx_mode="harvesting")
        for pol in (optimize_joint_general(s), greedy_policy(s)):
            assert check_policy_feasible(pol, s)
            used_r = L * np.cumsum(pol.q)
            have_r = np.cumsum(prof.e_r)
            assert abs(used_r[-1] - have_r[-1]) <= 1e-10 * have_r[-1]


def test_certify_greedy_fails_on_decreasing_profile():
    s = _scenario(np.zeros(3), np.array([50.0, 10.0, 2.0]) * L,
                  "constant_power", 10.0)
    cert = certify_optimality(greedy_policy(s), s)
    assert not cert.monotone
    assert len(cert.monotone_violations) > 0


def test_certify_constant_profile_vacuous():
    s = _scenario(np.full(4, 2000.0), np.full(4, 20.0))
    cert = certify_optimality(greedy_policy(s), s)
    assert cert.all_passed


def test_convergence_error_carries_policy():
    pol = Policy(p=np.array([1.0]), q=np.array([1.0]), tau=np.array([2.0]))
    err = ConvergenceError("no", pol, 0.5)
    assert err.policy is pol and err.gap == 0.5


def test_scenario_validation():
    prof = EHProfile(np.ones(2), np.ones(2), L=L, T=T, delta=1.0)
    with pytest.raises(ValueError):
        Scenario(profile=prof, params=PARAMS, tx_mode="constant_power")
    with pytest.raises(ValueError):
        Scenario(profile=prof, params=RateModelParams(M=4, T=100.0),
                 tx_mode="harvesting")
