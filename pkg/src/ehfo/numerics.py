"""Special functions, quadrature and scalar root finding shared by the rate
and optimizer modules.

All operations are pure functions; safe for concurrent use.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate, optimize, special

EULER_GAMMA = 0.5772156649015328606
LN2 = math.log(2.0)

_CF_MAX_ITER = 400
_SERIES_MAX_ITER = 400
_EPS = np.finfo(float).eps


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class BracketError(ValueError):
    """Root bracket does not enclose a sign change."""


@dataclass(frozen=True)
class QuadratureSpec:
    """Settings for expectations over the channel-gain distribution.

    ``node_count`` is the Gauss-Laguerre order; ``adaptive_interval`` falls
    back to adaptive quadrature when the fixed rule disagrees with a higher
    order rule.
    """

    node_count: int = 64
    scheme: str = "gauss_laguerre"
    abs_tol: float = 1e-10
    rel_tol: float = 1e-9

    def __post_init__(self):
        if self.node_count < 8:
            raise ValueError(f"node_count must be >= 8, got {self.node_count}")
        if self.scheme not in ("gauss_laguerre", "adaptive_interval"):
            raise ValueError(f"unknown quadrature scheme {self.scheme!r}")
        if not (self.abs_tol > 0.0 or self.rel_tol > 0.0):
            raise ValueError("at least one of abs_tol, rel_tol must be > 0")
        if self.abs_tol < 0.0 or self.rel_tol < 0.0:
            raise ValueError("tolerances must be non-negative")


def _expn_series(n: int, x: float) -> float:
    """E_n(x) for 0 < x <= 1 by the ascending series."""
    if n == 1:
        # E_1(x) = -gamma - ln x + sum_{k>=1} (-1)^{k+1} x^k / (k k!)
        total = -EULER_GAMMA - math.log(x)
        term = 1.0
        for k in range(1, _SERIES_MAX_ITER):
            term *= -x / k
            delta = -term / k
            total += delta
            if abs(delta) < abs(total) * 1e-17:
                return total
        raise QuadratureError(f"E_1 series failed to converge at x={x}")
    # general n >= 2: E_n(x) = [(-x)^{n-1}/(n-1)!](psi(n) - ln x)
    #                          - sum_{m != n-1} (-x)^m / ((m-n+1) m!)
    psi_n = -EULER_GAMMA + sum(1.0 / k for k in range(1, n))
    total = ((-x) ** (n - 1) / math.factorial(n - 1)) * (psi_n - math.log(x))
    term = 1.0  # (-x)^m / m!
    for m in range(0, _SERIES_MAX_ITER):
        if m > 0:
            term *= -x / m
        if m != n - 1:
            delta = -term / (m - n + 1)
            total += delta
            if m > n and abs(delta) < abs(total) * 1e-17:
                return total
    raise QuadratureError(f"E_{n} series failed to converge at x={x}")


def _scaled_expn_cf(n: int, x: float) -> float:
    """e^x * E_n(x) by the modified Lentz continued fraction, for x >= 1."""
    tiny = 1e-300
    b = x + n
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, _CF_MAX_ITER):
        a = -i * (n - 1 + i)
        b += 2.0
        d = a * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + a / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise QuadratureError(f"E_{n} continued fraction failed at x={x}")


def exp_integral_n(n: int, x: float) -> float:
    """n-th order exponential integral E_n(x) = int_1^inf e^{-x t} t^{-n} dt.

    Satisfies n*E_{n+1}(x) = e^{-x} - x*E_n(x).  x = 0 is allowed only for
    n >= 2, where E_n(0) = 1/(n-1).
    """
    if n < 1 or int(n) != n:
        raise DomainError(f"order must be an integer >= 1, got {n}")
    if x < 0.0:
        raise DomainError(f"argument must be >= 0, got {x}")
    n = int(n)
    if x == 0.0:
        if n <= 1:
            raise DomainError("E_1 diverges at x = 0")
        return 1.0 / (n - 1)
    if x < 1.0:
        return _expn_series(n, x)
    return _scaled_expn_cf(n, x) * math.exp(-x)


def exp_integral_n_scaled(n: int, x: float) -> float:
    """e^x * E_n(x), stable for arbitrarily large x (no underflow)."""
    if n < 1 or int(n) != n:
        raise DomainError(f"order must be an integer >= 1, got {n}")
    if x <= 0.0:
        if x == 0.0 and n >= 2:
            return 1.0 / (n - 1)
        raise DomainError(f"argument must be > 0, got {x}")
    n = int(n)
    if x < 1.0:
        return _expn_series(n, x) * math.exp(x)
    return _scaled_expn_cf(n, x)


def scaled_expn_vec(n: int, x: np.ndarray) -> np.ndarray:
    """Vectorized e^x * E_n(x) for x > 0 (series below 1, Lentz CF above)."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1.0
    if np.any(small):
        xs = x[small]
        # ascending series, fixed iteration count (terms ~ x^m/m! vanish fast)
        psi_n = -EULER_GAMMA + sum(1.0 / k for k in range(1, n))
        if n == 1:
            total = -EULER_GAMMA - np.log(xs)
        else:
            total = ((-xs) ** (n - 1) / math.factorial(n - 1)) * (psi_n - np.log(xs))
        term = np.ones_like(xs)
        for m_idx in range(0, 60):
            if m_idx > 0:
                term = term * (-xs) / m_idx
            if m_idx != n - 1:
                total = total - term / (m_idx - n + 1)
        out[small] = total * np.exp(xs)
    big = ~small
    if np.any(big):
        xb = x[big]
        tiny = 1e-300
        b = xb + n
        c = np.full_like(xb, 1.0 / tiny)
        d = 1.0 / b
        h = d.copy()
        for i in range(1, _CF_MAX_ITER):
            a = -i * (n - 1 + i)
            b = b + 2.0
            d = a * d + b
            np.copyto(d, tiny, where=np.abs(d) < tiny)
            c = b + a / c
            np.copyto(c, tiny, where=np.abs(c) < tiny)
            d = 1.0 / d
            delta = c * d
            h = h * delta
            if np.all(np.abs(delta - 1.0) < 1e-15):
                break
        else:
            raise QuadratureError("vector continued fraction failed to converge")
        out[big] = h
    return out


def beta_fn(x: float, y: float) -> float:
    """Beta function Gamma(x)Gamma(y)/Gamma(x+y), computed in log space."""
    if x <= 0.0 or y <= 0.0:
        raise DomainError(f"beta_fn requires positive arguments, got ({x}, {y})")
    return math.exp(math.lgamma(x) + math.lgamma(y) - math.lgamma(x + y))


def digamma(x: float) -> float:
    """Digamma function psi(x) for x > 0."""
    if x <= 0.0:
        raise DomainError(f"digamma requires x > 0, got {x}")
    return float(special.digamma(x))


def _gamma_pdf_log(g: np.ndarray, m: int) -> np.ndarray:
    return (m - 1) * np.log(g) - g - math.lgamma(m)


def expect_gamma(f: Callable[[np.ndarray], np.ndarray], m: int,
                 spec: QuadratureSpec | None = None) -> float:
    """Expectation of f(G) for G with density g^{m-1} e^{-g} / Gamma(m).

    Uses fixed generalized Gauss-Laguerre quadrature, cross-checked against a
    higher-order rule; falls back to adaptive quadrature when the two
    disagree beyond the spec tolerances.
    """
    if m < 1 or int(m) != m:
        raise DomainError(f"shape must be an integer >= 1, got {m}")
    m = int(m)
    if spec is None:
        spec = QuadratureSpec()

    def _eval(nodes: np.ndarray) -> np.ndarray:
        try:
            vals = np.asarray(f(nodes), dtype=float)
            if vals.shape != nodes.shape:
                raise TypeError
        except TypeError:
            vals = np.array([float(f(g)) for g in nodes])
        return vals

    if spec.scheme == "gauss_laguerre":
        norm = math.gamma(m)
        x1, w1 = special.roots_genlaguerre(spec.node_count, m - 1)
        est1 = float(np.dot(w1, _eval(x1))) / norm
        x2, w2 = special.roots_genlaguerre(spec.node_count + 32, m - 1)
        est2 = float(np.dot(w2, _eval(x2))) / norm
        diff = abs(est1 - est2)
        if diff <= max(spec.abs_tol, abs(est2) * max(spec.rel_tol, 1e-8)):
            return est2
        # fall through to the adaptive scheme

    def integrand(g: float) -> float:
        if g <= 0.0:
            return 0.0
        return float(f(g)) * math.exp((m - 1) * math.log(g) - g - math.lgamma(m))

    val, err = integrate.quad(integrand, 0.0, np.inf,
                              epsabs=spec.abs_tol, epsrel=spec.rel_tol,
                              limit=200)
    if err > max(spec.abs_tol, abs(val) * spec.rel_tol) * 100:
        raise QuadratureError(
            f"adaptive quadrature failed: estimate {val}, error {err}")
    return val


def find_root(f: Callable[[float], float], lo: float, hi: float,
              tol: float = 1e-10) -> float:
    """Root of f on [lo, hi] with f(lo)*f(hi) <= 0.

    Bracketing (Brent); deterministic for identical inputs.  The result x
    satisfies |f(x)| <= tol or the final bracket width <= tol.
    """
    if not lo < hi:
        raise BracketError(f"need lo < hi, got [{lo}, {hi}]")
    flo = f(lo)
    fhi = f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0.0:
        raise BracketError(
            f"no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")
    root = optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * _EPS, maxiter=200)
    return float(root)
