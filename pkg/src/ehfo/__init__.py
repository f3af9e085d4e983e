"""Offline transmit-power, feedback-energy and feedback-duration scheduling
for an energy-harvesting MISO link with limited feedback."""

__version__ = "0.1.0"

from .majorization import (edmundson_madansky_bound, is_doubly_stochastic,
                           is_majorized, schur_test)
from .montecarlo import SimConfig, simulate_nu, simulate_rate
from .numerics import (QuadratureSpec, beta_fn, digamma, exp_integral_n,
                       expect_gamma, find_root)
from .oea import (Allocation, BandStructure, normalize_profile, oea,
                  verify_most_majorized)
from .optimizer import (CertificateReport, ConvergenceError, NotSimilarError,
                        Policy, Scenario, certify_optimality, check_similar,
                        greedy_policy, optimize_joint_general,
                        optimize_joint_similar, optimize_rx_only,
                        policy_objective, solve_tau_star)
from .profiles import (EHProfile, from_irradiance, hpn, hpn_linear,
                       load_profile, solar_profile, synthetic_exponential)
from .rate_models import (IntervalAllocation, RateModelParams, feedback_bits,
                          gap_bounds_u, gap_limit_high_power, gap_ub_vs_u,
                          nu_expected, nu_upper, rate_exact, rate_upper_u,
                          rate_upper_ub, round_bits_policy_rate)

__all__ = [
    "QuadratureSpec", "beta_fn", "digamma", "exp_integral_n", "expect_gamma",
    "find_root",
    "is_majorized", "is_doubly_stochastic", "schur_test",
    "edmundson_madansky_bound",
    "RateModelParams", "IntervalAllocation", "feedback_bits", "nu_expected",
    "nu_upper", "rate_exact", "rate_upper_u", "rate_upper_ub", "gap_bounds_u",
    "gap_limit_high_power", "gap_ub_vs_u", "round_bits_policy_rate",
    "Allocation", "BandStructure", "oea", "verify_most_majorized",
    "normalize_profile",
    "Scenario", "Policy", "CertificateReport", "solve_tau_star",
    "optimize_rx_only", "optimize_joint_similar", "optimize_joint_general",
    "greedy_policy", "certify_optimality", "check_similar",
    "policy_objective", "NotSimilarError", "ConvergenceError",
    "SimConfig", "simulate_nu", "simulate_rate",
    "EHProfile", "from_irradiance", "synthetic_exponential", "hpn",
    "hpn_linear", "load_profile", "solar_profile",
]
