"""Throughput formulas for the limited-feedback MISO link.

Per-frame model: a frame has T channel uses; tau of them carry uplink CSI
feedback (energy q per frame over an AWGN uplink of noise variance sigma2,
so b = tau*log2(1 + q/(tau*sigma2)) feedback bits), the remaining T - tau
carry downlink data at energy p per channel use through an M-antenna
beamformer picked from a random codebook of 2^b unit vectors.

Three per-interval rate models are exposed:

* ``rate_exact``    - the ergodic rate, via exponential integrals and an
                      adaptive integral over the quantization quality.
* ``rate_upper_u``  - concave-in-(q,tau) upper bound from Jensen plus the
                      universal quantization-quality bound.
* ``rate_upper_ub`` - concave-in-(p,q,tau) upper bound obtained by granting
                      the transmitter one extra unit of power.

All rates are in bits per channel use.  Energies are Joules per channel use
(p) and Joules per frame (q); noise variances are normalized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (LN2, DomainError, QuadratureError, QuadratureSpec,
                       beta_fn, digamma, exp_integral_n_scaled, expect_gamma,
                       scaled_expn_vec)

LOG2E = 1.0 / LN2


@dataclass(frozen=True)
class RateModelParams:
    """Link constants: antennas, frame length, uplink noise."""

    M: int
    T: float
    sigma2: float = 1.0
    quad: QuadratureSpec = field(default_factory=QuadratureSpec)

    def __post_init__(self):
        if self.M < 2 or int(self.M) != self.M:
            raise ValueError(f"M must be an integer >= 2, got {self.M}")
        if not self.T > 0.0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if not self.sigma2 > 0.0:
            raise ValueError(f"sigma2 must be > 0, got {self.sigma2}")


@dataclass(frozen=True)
class IntervalAllocation:
    """One interval's (p, q, tau) triple.

    q > 0 with tau = 0 is rejected: energy spent over zero channel uses has
    no feedback-bit interpretation.
    """

    p: float
    q: float
    tau: float

    def __post_init__(self):
        if self.p < 0.0 or self.q < 0.0:
            raise ValueError(f"p and q must be >= 0, got ({self.p}, {self.q})")
        if self.tau < 0.0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.q > 0.0 and self.tau == 0.0:
            raise ValueError("q > 0 requires tau > 0")


def _check_tau(a: IntervalAllocation, params: RateModelParams) -> None:
    if not a.tau < params.T:
        raise ValueError(f"tau must be < T, got tau={a.tau}, T={params.T}")


def feedback_bits(q: float, tau: float, sigma2: float) -> float:
    """Feedback bits b = tau*log2(1 + q/(tau*sigma2)); 0 when q = 0.

    Non-integer values are allowed; rounding is a separate policy choice.
    """
    if q < 0.0:
        raise DomainError(f"q must be >= 0, got {q}")
    if q == 0.0:
        return 0.0
    if tau <= 0.0:
        raise DomainError(f"tau must be > 0 when q > 0, got tau={tau}")
    if sigma2 <= 0.0:
        raise DomainError(f"sigma2 must be > 0, got {sigma2}")
    return tau * math.log2(1.0 + q / (tau * sigma2))


def nu_expected(b: float, M: int) -> float:
    """Mean quantization quality of a 2^b-codeword random codebook.

    E[nu] = 1 - 2^b * beta(2^b, M/(M-1)); equals 1/M at b = 0 and tends to 1
    as b grows.
    """
    if b < 0.0:
        raise DomainError(f"b must be >= 0, got {b}")
    y = M / (M - 1.0)
    n_codes = 2.0 ** b
    if n_codes <= 1e12:
        log_term = (b * LN2 + math.lgamma(n_codes) + math.lgamma(y)
                    - math.lgamma(n_codes + y))
        return 1.0 - math.exp(log_term)
    # large-codebook asymptotics: Gamma(x)/Gamma(x+y) ~ x^-y (1 + O(1/x)),
    # the dropped terms are < 1e-12 here
    log_term = math.lgamma(y) + b * LN2 * (1.0 - y)
    return 1.0 - math.exp(log_term)


def nu_upper(b: float, M: int) -> float:
    """Universal upper bound 1 - ((M-1)/M) 2^{-b/(M-1)} on E[nu]."""
    if b < 0.0:
        raise DomainError(f"b must be >= 0, got {b}")
    return 1.0 - ((M - 1.0) / M) * 2.0 ** (-b / (M - 1.0))


# ---------------------------------------------------------------------------
# scalar bound helpers (continuous extension at tau = 0), vectorizable
# ---------------------------------------------------------------------------

def bound_quantities(p, q, tau, params: RateModelParams):
    """Return (t, z, f) with t = 1 - tau/T, z = 2^{-b/(M-1)}, f = M - (M-1)z.

    Accepts scalars or same-shape arrays; tau = 0 or q = 0 give z = 1, f = 1.
    """
    m = params.M
    t = 1.0 - np.asarray(tau, dtype=float) / params.T
    tau_a = np.asarray(tau, dtype=float)
    q_a = np.asarray(q, dtype=float)
    active = (tau_a > 0.0) & (q_a > 0.0)
    y = np.where(active, q_a / (np.where(active, tau_a, 1.0) * params.sigma2), 0.0)
    z = np.where(active,
                 np.exp(-(tau_a / (m - 1.0)) * np.log1p(y)),
                 1.0)
    f = m - (m - 1.0) * z
    return t, z, f


def bound_u_value(p, q, tau, params: RateModelParams):
    """Upper bound t*log2(1 + p*f/t); log2(1+p) at tau = 0."""
    t, _, f = bound_quantities(p, q, tau, params)
    return t * np.log2(1.0 + np.asarray(p, dtype=float) * f / t)


def bound_ub_value(p, q, tau, params: RateModelParams):
    """Upper bound t*log2(1 + (1 + p/t)*f/t); log2(2+p) at tau = 0."""
    t, _, f = bound_quantities(p, q, tau, params)
    p_a = np.asarray(p, dtype=float)
    return t * np.log2(1.0 + (1.0 + p_a / t) * f / t)


def rate_upper_u(a: IntervalAllocation, params: RateModelParams) -> float:
    """Jensen/universal-quantization upper bound on the ergodic rate."""
    _check_tau(a, params)
    return float(bound_u_value(a.p, a.q, a.tau, params))


def rate_upper_ub(a: IntervalAllocation, params: RateModelParams) -> float:
    """Extra-watt upper bound; dominates ``rate_upper_u`` everywhere."""
    _check_tau(a, params)
    return float(bound_ub_value(a.p, a.q, a.tau, params))


# ---------------------------------------------------------------------------
# exact ergodic rate
# ---------------------------------------------------------------------------

def _full_csi_sum(m: int, rho: float) -> float:
    """sum_{l=1}^{M} e^rho E_l(rho), the perfect-beamforming term."""
    return sum(exp_integral_n_scaled(l, rho) for l in range(1, m + 1))


def _quantization_loss_integrand(nu, rho: float, m: int,
                                 log2_codebook: float):
    """CDF(nu)^N * (M/nu) * e^{rho/nu} E_{M+1}(rho/nu), vectorized; the CDF
    power is taken in log space and flushed to zero where it underflows."""
    nu = np.asarray(nu, dtype=float)
    n_codes = 2.0 ** log2_codebook if log2_codebook < 1020 else math.inf
    miss = (1.0 - nu) ** (m - 1)  # P(single codeword quality > nu) complement
    pos = (nu > 0.0) & (miss < 1.0)
    safe_nu = np.where(pos, nu, 0.5)
    # log1p keeps full precision when miss ~ eps and n_codes amplifies it
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = n_codes * np.log1p(-np.where(pos, miss, 0.5))
    cdf = np.where(expo >= -745.0, np.exp(np.maximum(expo, -746.0)), 0.0)
    cdf = np.where(np.isnan(expo), 1.0, cdf)  # inf * log1p(0) at nu = 1
    g = (m / safe_nu) * scaled_expn_vec(m + 1, rho / safe_nu)
    return np.where(pos, cdf * g, 0.0)


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gl_rule(order: int) -> tuple[np.ndarray, np.ndarray]:
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


_PANEL_LADDER = (1e-10, 1e-6, 1e-3, 0.02, 0.1, 0.3, 0.5, 0.7, 0.9, 0.98,
                 0.999, 1.0 - 1e-6, 1.0 - 1e-10)
_MAX_PANEL_ROUNDS = 48


def _panel_integral(f, cuts, abs_tol: float, rel_tol: float,
                    where: str) -> tuple[float, float]:
    """Integrate a vectorized smooth f over [cuts[0], cuts[-1]].

    Each panel is evaluated with paired Gauss-Legendre rules (16 vs 32
    nodes); panels whose disagreement exceeds the tolerance are bisected.
    All panels of a round are evaluated in one batched call to f.
    """
    x_lo, w_lo = _gl_rule(16)
    x_hi, w_hi = _gl_rule(32)
    panels = [(lo, hi) for lo, hi in zip(cuts[:-1], cuts[1:]) if hi > lo]
    total = 0.0
    err_total = 0.0
    for _ in range(_MAX_PANEL_ROUNDS):
        if not panels:
            return total, err_total
        mids = np.array([(lo + hi) / 2 for lo, hi in panels])
        halfs = np.array([(hi - lo) / 2 for lo, hi in panels])
        nodes = np.concatenate([
            (mids[:, None] + halfs[:, None] * x_lo).ravel(),
            (mids[:, None] + halfs[:, None] * x_hi).ravel()])
        vals = f(nodes)
        n_p = len(panels)
        v_lo = vals[:n_p * x_lo.size].reshape(n_p, x_lo.size)
        v_hi = vals[n_p * x_lo.size:].reshape(n_p, x_hi.size)
        est_lo = halfs * (v_lo @ w_lo)
        est_hi = halfs * (v_hi @ w_hi)
        errs = np.abs(est_hi - est_lo)
        next_panels = []
        for (lo, hi), est, err in zip(panels, est_hi, errs):
            if (err <= max(abs_tol, abs(est) * rel_tol)
                    or hi - lo < 1e-14):
                total += est
                err_total += err
            else:
                mid = (lo + hi) / 2
                next_panels.append((lo, mid))
                next_panels.append((mid, hi))
        panels = next_panels
    raise QuadratureError(f"panel integration failed to converge ({where})")


def _rate_exact_core(p: float, tau: float, log2_codebook: float,
                     params: RateModelParams) -> float:
    """Ergodic rate for codebook size 2^log2_codebook at (p, tau)."""
    if p == 0.0:
        return 0.0
    t = 1.0 - tau / params.T
    if t <= 0.0:
        return 0.0
    m = params.M
    rho = t / p
    full = _full_csi_sum(m, rho)
    spec = params.quad

    # the codebook CDF factor switches from 0 to 1 in a narrow nu window
    # (approaching nu = 1 for large codebooks); cutting panels at its
    # quantiles keeps every panel smooth at its own scale
    n_codes = 2.0 ** log2_codebook if log2_codebook < 1020 else math.inf

    def _one_minus_quantile(c: float) -> float:
        # 1 - nu where CDF(nu) = c, i.e. (1 - c^{1/N})^{1/(M-1)}, computed
        # via expm1 so it stays exact down to ~1e-300
        if math.isinf(n_codes):
            return 0.0
        g = -math.expm1(math.log(c) / n_codes)
        if g <= 0.0:
            return 0.0
        return math.exp(math.log(g) / (m - 1))

    c_floor = 1e-13
    w_floor = _one_minus_quantile(c_floor)
    if w_floor < 1e-13:
        # the whole CDF transition is narrower than float resolution near
        # nu = 1; the loss it carries is analytically below tolerance:
        # below the c_floor quantile CDF <= c_floor and the integral of the
        # weight is <= log1p(M/rho); above it the window has width w_floor
        # and the weight is <= 2*M*e/M
        loss = 0.0
        abserr = c_floor * math.log1p(m / rho) + 6.0 * w_floor
    else:
        cuts = [0.0]
        for c in _PANEL_LADDER:
            v = min(max(1.0 - _one_minus_quantile(c), 1e-12), 1.0 - 1e-15)
            if v > cuts[-1]:
                cuts.append(v)
        cuts.append(1.0)
        loss, abserr = _panel_integral(
            lambda nu: _quantization_loss_integrand(nu, rho, m, log2_codebook),
            cuts, spec.abs_tol, spec.rel_tol,
            where=f"p={p}, tau={tau}, b={log2_codebook}")
    if abserr > 100 * max(spec.abs_tol, abs(loss) * spec.rel_tol) + 1e-13:
        raise QuadratureError(
            f"rate integral error {abserr:.2e} exceeds tolerance "
            f"(p={p}, tau={tau}, b={log2_codebook})")
    rate = t * LOG2E * (full - loss)
    return max(rate, 0.0)


def rate_exact(a: IntervalAllocation, params: RateModelParams) -> float:
    """Ergodic rate of the beamformed link with RVQ limited feedback."""
    _check_tau(a, params)
    if a.p == 0.0:
        return 0.0
    b = feedback_bits(a.q, a.tau, params.sigma2) if a.q > 0.0 else 0.0
    return _rate_exact_core(a.p, a.tau, b, params)


def round_bits_policy_rate(a: IntervalAllocation,
                           params: RateModelParams) -> float:
    """Ergodic rate when the feedback bits are floored to an integer.

    The feedback duration tau (and hence the pre-log) is unchanged; only the
    codebook size becomes 2^floor(b).
    """
    _check_tau(a, params)
    if a.p == 0.0:
        return 0.0
    b = feedback_bits(a.q, a.tau, params.sigma2) if a.q > 0.0 else 0.0
    return _rate_exact_core(a.p, a.tau, float(math.floor(b)), params)


# ---------------------------------------------------------------------------
# analytic gap bounds
# ---------------------------------------------------------------------------

def gap_bounds_u(a: IntervalAllocation,
                 params: RateModelParams) -> tuple[float, float]:
    """Analytic (lower, upper) bounds on rate_upper_u - rate_exact.

    The lower bound applies Jensen over the quantization quality; the upper
    bound applies the chord bound for concave integrands.  Both use the mean
    quality of the random codebook and the channel-gain expectation.
    """
    _check_tau(a, params)
    if a.p <= 0.0:
        raise DomainError("gap bounds require p > 0")
    m = params.M
    t = 1.0 - a.tau / params.T
    b = feedback_bits(a.q, a.tau, params.sigma2) if a.q > 0.0 else 0.0
    e_nu = nu_expected(b, m)
    nu_u = nu_upper(b, m)
    s = a.p / t
    ru = t * math.log2(1.0 + s * m * nu_u)
    mean_with_nu = expect_gamma(lambda g: np.log2(1.0 + s * g * e_nu), m,
                                params.quad)
    mean_full = expect_gamma(lambda g: np.log2(1.0 + s * g), m, params.quad)
    lower = ru - t * mean_with_nu
    upper = ru - t * mean_full * e_nu
    return lower, upper


def gap_limit_high_power(M: int) -> float:
    """High-power limit of the bound gap at unbounded feedback.

    Equals log2(M) - psi(M)/ln 2 where psi is the digamma function (the mean
    of log2 of a Gamma(M,1) channel gain); decreasing in M and -> 0 as M
    grows.  For M = 4 this is about 0.187761.
    """
    if M < 2 or int(M) != M:
        raise DomainError(f"M must be an integer >= 2, got {M}")
    return math.log2(M) - digamma(M) / LN2


def gap_ub_vs_u(a: IntervalAllocation, params: RateModelParams) -> float:
    """Closed form for rate_upper_ub - rate_upper_u.

    t*log2((t^2 + t f + p f)/(t + p f)) - t*log2(t); decreasing in p, with
    limits t*log2(1 + f/t) as p -> 0 and -t*log2(t) as p -> inf.
    """
    _check_tau(a, params)
    t, _, f = bound_quantities(a.p, a.q, a.tau, params)
    t = float(t)
    f = float(f)
    return (t * math.log2((t * t + t * f + a.p * f) / (t + a.p * f))
            - t * math.log2(t))
