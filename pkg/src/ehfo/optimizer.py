"""Policy optimizers for the energy-harvesting feedback link.

Three solvers:

* ``optimize_rx_only``      - receiver harvests, transmitter grid-powered:
                              staircase energy allocation plus per-interval
                              feedback-duration roots (globally optimal).
* ``optimize_joint_similar``- both nodes harvest and their staircase band
                              structures coincide: per-node staircase
                              allocations are jointly optimal.
* ``optimize_joint_general``- both nodes harvest, arbitrary profiles:
                              away-step conditional gradient over the
                              deferral polytope with an exact linear oracle,
                              followed by a band-structure polish that turns
                              near-active prefix constraints into exact
                              band-average allocations.

Plus the spend-on-arrival ``greedy_policy`` baseline and optimality
certificates (monotone allocations, buffer emptying at rate changes,
terminal equality).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import LN2
from .oea import Allocation, ProfileError, normalize_profile, oea
from .profiles import EHProfile
from .rate_models import RateModelParams, bound_u_value, bound_ub_value

_TAU_BISECT_ITERS = 80
_TAU_LO_FRACTION = 1e-12
_TAU_HI_FRACTION = 1.0 - 1e-9


class NotSimilarError(ValueError):
    """Profiles do not share a staircase band structure."""


class ConvergenceError(RuntimeError):
    """General solver failed to certify optimality; carries the best
    feasible policy found and its duality gap."""

    def __init__(self, message: str, policy: "Policy", gap: float):
        super().__init__(message)
        self.policy = policy
        self.gap = gap


@dataclass(frozen=True)
class Scenario:
    """One optimization instance: profile, link constants, transmitter mode.

    ``tx_mode`` is "constant_power" (fixed supply ``p_const``, receiver
    harvests) or "harvesting" (both nodes harvest).
    """

    profile: EHProfile
    params: RateModelParams
    tx_mode: str = "harvesting"
    p_const: float | None = None

    def __post_init__(self):
        if self.tx_mode not in ("constant_power", "harvesting"):
            raise ValueError(f"unknown tx_mode {self.tx_mode!r}")
        if self.tx_mode == "constant_power":
            if self.p_const is None or not self.p_const > 0.0:
                raise ValueError("constant_power mode requires p_const > 0")
        if self.params.T != self.profile.T:
            raise ValueError(
                f"params.T ({self.params.T}) != profile.T ({self.profile.T})")


@dataclass(frozen=True)
class Policy:
    """Per-interval (p, q, tau) schedule and the bound it optimizes."""

    p: np.ndarray
    q: np.ndarray
    tau: np.ndarray
    objective_kind: str = "upper_ub"

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        q = np.asarray(self.q, dtype=float)
        tau = np.asarray(self.tau, dtype=float)
        if not (p.shape == q.shape == tau.shape) or p.ndim != 1:
            raise ValueError("p, q, tau must be 1-D arrays of equal length")
        if self.objective_kind not in ("exact", "upper_u", "upper_ub"):
            raise ValueError(f"unknown objective_kind {self.objective_kind!r}")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "tau", tau)

    @property
    def K(self) -> int:
        return self.p.size


@dataclass(frozen=True)
class CertificateReport:
    """Optimality-certificate results; empty index lists mean a clean pass."""

    monotone: bool
    buffer_emptying: bool
    terminal_equality: bool
    monotone_violations: tuple[int, ...] = ()
    buffer_violations: tuple[int, ...] = ()

    @property
    def all_passed(self) -> bool:
        return self.monotone and self.buffer_emptying and self.terminal_equality


# ---------------------------------------------------------------------------
# feedback-duration optimization
# ---------------------------------------------------------------------------

def _du_dtau(tau, p, q, params: RateModelParams):
    """d/dtau of the grid-powered bound t*log2(1 + p f / t)."""
    m = params.M
    big_t = params.T
    s2 = params.sigma2
    t = 1.0 - tau / big_t
    y = q / (tau * s2)
    db = np.log2(1.0 + y) - y / ((1.0 + y) * LN2)
    z = np.exp(-(tau / (m - 1.0)) * np.log1p(y))
    f = m - (m - 1.0) * z
    fp = LN2 * z * db
    tp = -1.0 / big_t
    return (tp * np.log2(1.0 + p * f / t)
            + p * (fp * t - f * tp) / ((t + p * f) * LN2))


def _dub_dtau(tau, p, q, params: RateModelParams):
    """d/dtau of the extra-watt bound t*log2(1 + (1 + p/t) f / t)."""
    m = params.M
    big_t = params.T
    s2 = params.sigma2
    t = 1.0 - tau / big_t
    y = q / (tau * s2)
    db = np.log2(1.0 + y) - y / ((1.0 + y) * LN2)
    z = np.exp(-(tau / (m - 1.0)) * np.log1p(y))
    f = m - (m - 1.0) * z
    fp = LN2 * z * db
    tp = -1.0 / big_t
    a = (t + p) * f / (t * t)
    da = (tp * f + (t + p) * fp - 2.0 * (t + p) * f * tp / t) / (t * t)
    return tp * np.log2(1.0 + a) + t * da / ((1.0 + a) * LN2)


_DERIVS = {"upper_u": _du_dtau, "upper_ub": _dub_dtau}
_VALUES = {"upper_u": bound_u_value, "upper_ub": bound_ub_value}


def tau_star_vec(p, q, params: RateModelParams,
                 bound: str = "upper_ub") -> np.ndarray:
    """Elementwise maximizer of the chosen bound over tau in [0, T).

    Bisection on the analytic tau-derivative; tau* = 0 where q = 0 (feedback
    energy buys nothing) or p = 0 (convention: the exact rate is zero).
    """
    deriv = _DERIVS[bound]
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p, q = np.broadcast_arrays(p, q)
    out = np.zeros(p.shape)
    active = (p > 0.0) & (q > 0.0)
    if not np.any(active):
        return out
    pa = p[active]
    qa = q[active]
    lo = np.full(pa.shape, params.T * _TAU_LO_FRACTION)
    hi = np.full(pa.shape, params.T * _TAU_HI_FRACTION)
    d_lo = deriv(lo, pa, qa, params)
    d_hi = deriv(hi, pa, qa, params)
    boundary = d_lo <= 0.0          # no interior gain: stay at tau = 0
    interior_hi = d_hi >= 0.0       # should not happen (bound -> 0 at T)
    for _ in range(_TAU_BISECT_ITERS):
        mid = 0.5 * (lo + hi)
        pos = deriv(mid, pa, qa, params) > 0.0
        lo = np.where(pos, mid, lo)
        hi = np.where(pos, hi, mid)
    root = 0.5 * (lo + hi)
    root = np.where(boundary, 0.0, root)
    root = np.where(interior_hi, params.T * _TAU_HI_FRACTION, root)
    out[active] = root
    return out


def solve_tau_star(p: float, q: float, params: RateModelParams,
                   bound: str = "upper_ub") -> float:
    """Optimal feedback duration at fixed (p, q) for one interval."""
    if bound not in _DERIVS:
        raise ValueError(f"unknown bound {bound!r}")
    if p < 0.0 or q < 0.0:
        raise ValueError(f"p and q must be >= 0, got ({p}, {q})")
    return float(tau_star_vec(np.array([p]), np.array([q]), params, bound)[0])


def envelope_value(p, q, params: RateModelParams,
                   bound: str = "upper_ub") -> np.ndarray:
    """Bound value at the optimal tau, elementwise."""
    tau = tau_star_vec(p, q, params, bound)
    return _VALUES[bound](p, q, tau, params)


def _envelope_sum(p, q, params, bound="upper_ub"):
    return float(np.sum(envelope_value(p, q, params, bound)))


# ---------------------------------------------------------------------------
# policies
# ---------------------------------------------------------------------------

def policy_objective(pol: Policy, params: RateModelParams) -> float:
    """Total bound value of a policy under its own objective."""
    value = _VALUES[pol.objective_kind]
    return float(np.sum(value(pol.p, pol.q, pol.tau, params)))


def check_policy_feasible(pol: Policy, s: Scenario,
                          rel_tol: float = 1e-10) -> bool:
    """Prefix energy-neutrality at both buffers with terminal equality."""
    prof = s.profile
    if pol.K != prof.K:
        return False
    if np.any(pol.tau < 0.0) or np.any(pol.tau >= prof.T):
        return False
    if np.any(pol.p < -1e-15) or np.any(pol.q < -1e-15):
        return False
    tol_r = rel_tol * max(1.0, float(np.sum(prof.e_r)))
    used_r = prof.L * np.cumsum(pol.q)
    have_r = np.cumsum(prof.e_r)
    if np.any(used_r > have_r + tol_r):
        return False
    if abs(used_r[-1] - have_r[-1]) > tol_r:
        return False
    if s.tx_mode == "harvesting":
        tol_t = rel_tol * max(1.0, float(np.sum(prof.e_t)))
        used_t = prof.L * prof.T * np.cumsum(pol.p)
        have_t = np.cumsum(prof.e_t)
        if np.any(used_t > have_t + tol_t):
            return False
        if abs(used_t[-1] - have_t[-1]) > tol_t:
            return False
    else:
        if np.any(pol.p > s.p_const + 1e-12):
            return False
    return True


def greedy_policy(s: Scenario) -> Policy:
    """Spend each interval exactly what arrived in it; optimize only tau."""
    prof = s.profile
    q = prof.e_r / prof.L
    if s.tx_mode == "constant_power":
        p = np.full(prof.K, float(s.p_const))
        kind = "upper_u"
    else:
        p = prof.e_t / (prof.L * prof.T)
        kind = "upper_ub"
    tau = tau_star_vec(p, q, s.params, kind)
    return Policy(p=p, q=q, tau=tau, objective_kind=kind)


def optimize_rx_only(s: Scenario) -> Policy:
    """Global optimum when only the receiver harvests.

    Transmit at the full power cap throughout; the feedback energies are the
    staircase allocation of the receive arrivals, and each interval's
    feedback duration zeroes the bound's tau-derivative.
    """
    if s.tx_mode != "constant_power":
        raise ValueError("optimize_rx_only requires constant_power mode")
    prof = s.profile
    q = oea(prof.e_r / prof.L).values
    p = np.full(prof.K, float(s.p_const))
    tau = tau_star_vec(p, q, s.params, "upper_u")
    return Policy(p=p, q=q, tau=tau, objective_kind="upper_u")


def check_similar(e_t, e_r, L: int, T: float) -> bool:
    """True iff both staircase allocations share the same band boundaries."""
    a_r = oea(np.asarray(e_r, dtype=float) / L)
    a_t = oea(np.asarray(e_t, dtype=float) / (L * T))
    return a_r.bands.boundaries == a_t.bands.boundaries


def _expand_policy(p, q, tau, offset: int, kind: str) -> Policy:
    if offset:
        zeros = np.zeros(offset)
        p = np.concatenate([zeros, p])
        q = np.concatenate([zeros, q])
        tau = np.concatenate([zeros, tau])
    return Policy(p=p, q=q, tau=tau, objective_kind=kind)


def optimize_joint_similar(s: Scenario) -> Policy:
    """Global optimum when both nodes harvest with similar profiles."""
    if s.tx_mode != "harvesting":
        raise ValueError("optimize_joint_similar requires harvesting mode")
    prof = s.profile
    e_t, e_r, offset = normalize_profile(prof.e_t, prof.e_r)
    if not check_similar(e_t, e_r, prof.L, prof.T):
        raise NotSimilarError(
            "profiles do not share a band structure; use the general solver")
    p = oea(e_t / (prof.L * prof.T)).values
    q = oea(e_r / prof.L).values
    tau = tau_star_vec(p, q, s.params, "upper_ub")
    return _expand_policy(p, q, tau, offset, "upper_ub")


# ---------------------------------------------------------------------------
# general joint solver: away-step conditional gradient + structure polish
# ---------------------------------------------------------------------------

def _lmo_assignment(coeffs: np.ndarray) -> np.ndarray:
    """For each arrival index i, the j >= i maximizing coeffs[j] (earliest
    index on ties)."""
    k = coeffs.size
    best = np.empty(k, dtype=int)
    best[k - 1] = k - 1
    for j in range(k - 2, -1, -1):
        nxt = best[j + 1]
        best[j] = j if coeffs[j] >= coeffs[nxt] else nxt
    return best


def _assignment_vector(assign: np.ndarray, arrivals: np.ndarray) -> np.ndarray:
    out = np.zeros(arrivals.size)
    np.add.at(out, assign, arrivals)
    return out


def _envelope_grad(p, q, params: RateModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of sum_k max_tau R_ub wrt (p, q), via the envelope theorem.

    At boundary rows (p = 0 or q = 0, where tau* sits at 0) one-sided
    finite differences replace the analytic form.
    """
    m = params.M
    s2 = params.sigma2
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    tau = tau_star_vec(p, q, params, "upper_ub")
    interior = tau > 0.0
    g_p = np.zeros(p.shape)
    g_q = np.zeros(q.shape)
    if np.any(interior):
        pi = p[interior]
        qi = q[interior]
        ti = 1.0 - tau[interior] / params.T
        y = qi / (tau[interior] * s2)
        z = np.exp(-(tau[interior] / (m - 1.0)) * np.log1p(y))
        f = m - (m - 1.0) * z
        f_q = tau[interior] * z / (tau[interior] * s2 + qi)
        a = (ti + pi) * f / (ti * ti)
        g_p[interior] = f / (ti * LN2 * (1.0 + a))
        g_q[interior] = (ti + pi) * f_q / (ti * LN2 * (1.0 + a))
    boundary = ~interior
    if np.any(boundary):
        pb = p[boundary]
        qb = q[boundary]
        hp = 1e-7 * (1.0 + np.abs(pb))
        hq = 1e-7 * (1.0 + np.abs(qb))
        base = envelope_value(pb, qb, params, "upper_ub")
        g_p[boundary] = (envelope_value(pb + hp, qb, params, "upper_ub")
                         - base) / hp
        g_q[boundary] = (envelope_value(pb, qb + hq, params, "upper_ub")
                         - base) / hq
    return g_p, g_q


def _line_search(x_p, x_q, d_p, d_q, gamma_max, params,
                 rounds: int = 4, grid: int = 17) -> float:
    """Approximate argmax of the concave 1-D slice via grid refinement."""
    lo, hi = 0.0, gamma_max
    best = 0.0
    for _ in range(rounds):
        gammas = np.linspace(lo, hi, grid)
        pmat = x_p[None, :] + gammas[:, None] * d_p[None, :]
        qmat = x_q[None, :] + gammas[:, None] * d_q[None, :]
        pmat = np.maximum(pmat, 0.0)
        qmat = np.maximum(qmat, 0.0)
        tau = tau_star_vec(pmat, qmat, params, "upper_ub")
        vals = np.sum(bound_ub_value(pmat, qmat, tau, params), axis=1)
        idx = int(np.argmax(vals))
        best = float(gammas[idx])
        span = (hi - lo) / (grid - 1)
        lo = max(0.0, best - span)
        hi = min(gamma_max, best + span)
    return best


def _bands_from_slacks(arrivals: np.ndarray, alloc: np.ndarray,
                       threshold: float) -> tuple[int, ...]:
    slack = np.cumsum(arrivals) - np.cumsum(alloc)
    ends = [k + 1 for k in range(arrivals.size - 1) if slack[k] <= threshold]
    return tuple([0] + ends + [arrivals.size])


def _piecewise_oea(arrivals: np.ndarray,
                   boundaries: tuple[int, ...]) -> np.ndarray:
    """Staircase allocation run independently inside each candidate band;
    always feasible, and equal to plain band averages when those are."""
    out = np.empty(arrivals.size)
    for lo, hi in zip(boundaries[:-1], boundaries[1:]):
        out[lo:hi] = oea(arrivals[lo:hi]).values
    return out


def _polish_candidates(x_p, x_q, c_t, c_r):
    """Band structures read off the iterate's buffer slacks at a ladder of
    thresholds, plus the per-buffer staircase structures."""
    cands = []
    seen = set()
    total_t = max(float(np.sum(c_t)), 1e-300)
    total_r = max(float(np.sum(c_r)), 1e-300)
    ladders = [(f * total_t, f * total_r)
               for f in (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-8, 1e-10)]
    structures = [(_bands_from_slacks(c_t, x_p, tt),
                   _bands_from_slacks(c_r, x_q, tr)) for tt, tr in ladders]
    structures.append((oea(c_t).bands.boundaries, oea(c_r).bands.boundaries))
    for s_t, s_r in structures:
        key = (s_t, s_r)
        if key in seen:
            continue
        seen.add(key)
        cands.append((_piecewise_oea(c_t, s_t), _piecewise_oea(c_r, s_r)))
    return cands


def _fw_gap(x_p, x_q, c_t, c_r, params) -> tuple[float, np.ndarray, np.ndarray]:
    """Duality gap max_v grad . (v - x) and the maximizing vertex."""
    g_p, g_q = _envelope_grad(x_p, x_q, params)
    v_p = _assignment_vector(_lmo_assignment(g_p), c_t)
    v_q = _assignment_vector(_lmo_assignment(g_q), c_r)
    gap = float(np.dot(g_p, v_p - x_p) + np.dot(g_q, v_q - x_q))
    return gap, v_p, v_q


# -- segment-KKT polish ------------------------------------------------------
#
# At the optimum the allocation is constant on segments; at every segment
# boundary at least one buffer is empty (otherwise neighbor averaging or an
# exchange step would improve the objective).  Within the bands delimited by
# one buffer's emptying points, that buffer's marginal utilities are equal.
# Reading the segmentation and the emptying pattern off a near-optimal
# iterate therefore reduces the problem to a small smooth KKT system in the
# segment constants and one multiplier per band, solved here by Newton with
# finite-difference Hessian blocks of the analytic gradient.

def _detect_structure(x_p, x_q, c_t, c_r, eta_seg: float, eta_resid: float):
    k = x_p.size
    scale_p = max(float(np.max(x_p)), 1e-300)
    scale_q = max(float(np.max(x_q)), 1e-300)
    bounds = [0]
    for i in range(1, k):
        if (abs(x_p[i] - x_p[i - 1]) > eta_seg * scale_p
                or abs(x_q[i] - x_q[i - 1]) > eta_seg * scale_q):
            bounds.append(i)
    bounds.append(k)
    resid_t = np.cumsum(c_t) - np.cumsum(x_p)
    resid_r = np.cumsum(c_r) - np.cumsum(x_q)
    tol_t = eta_resid * max(float(np.sum(c_t)), 1e-300)
    tol_r = eta_resid * max(float(np.sum(c_r)), 1e-300)
    t_ends = []
    r_ends = []
    for b in bounds[1:-1]:
        t_active = resid_t[b - 1] <= tol_t
        r_active = resid_r[b - 1] <= tol_r
        if not (t_active or r_active):
            return None  # boundary with no empty buffer: wrong structure
        if t_active:
            t_ends.append(b)
        if r_active:
            r_ends.append(b)
    return tuple(bounds), tuple(t_ends + [k]), tuple(r_ends + [k])


def _solve_segment_kkt(structure, c_t, c_r, params, x_p, x_q,
                       newton_iters: int = 30):
    """Exact segment constants for a given (segments, TX-ends, RX-ends).

    Unknowns: one (p, q) per segment plus one multiplier per band; equations
    are equal marginals within each band and exact band energy sums.
    Returns (p, q) full vectors or None when the structure is inconsistent.
    """
    bounds, t_ends, r_ends = structure
    k = c_t.size
    segs = list(zip(bounds[:-1], bounds[1:]))
    m = len(segs)
    n_s = np.array([hi - lo for lo, hi in segs], dtype=float)
    cum_t = np.concatenate(([0.0], np.cumsum(c_t)))
    cum_r = np.concatenate(([0.0], np.cumsum(c_r)))

    def bands_of(ends):
        bands = []
        start = 0
        for e in ends:
            members = [i for i, (lo, hi) in enumerate(segs)
                       if lo >= start and hi <= e]
            if not members or segs[members[-1]][1] != e or segs[members[0]][0] != start:
                return None
            bands.append((start, e, members))
            start = e
        return bands

    tx_bands = bands_of(t_ends)
    rx_bands = bands_of(r_ends)
    if tx_bands is None or rx_bands is None:
        return None

    e_tx = np.array([cum_t[e] - cum_t[s] for s, e, _ in tx_bands])
    e_rx = np.array([cum_r[e] - cum_r[s] for s, e, _ in rx_bands])
    band_t_of = np.empty(m, dtype=int)
    for bi, (_, _, members) in enumerate(tx_bands):
        band_t_of[members] = bi
    band_r_of = np.empty(m, dtype=int)
    for bi, (_, _, members) in enumerate(rx_bands):
        band_r_of[members] = bi

    # zero-energy RX bands pin q = 0 on their segments (no equations there)
    q_free = np.array([e_rx[band_r_of[i]] > 0.0 for i in range(m)])
    p_free = np.array([e_tx[band_t_of[i]] > 0.0 for i in range(m)])
    rx_live = [bi for bi in range(len(rx_bands)) if e_rx[bi] > 0.0]
    tx_live = [bi for bi in range(len(tx_bands)) if e_tx[bi] > 0.0]
    rx_pos = {bi: j for j, bi in enumerate(rx_live)}
    tx_pos = {bi: j for j, bi in enumerate(tx_live)}

    # warm start: band-average levels from the iterate's segment means
    p = np.array([max(np.mean(x_p[lo:hi]), 0.0) for lo, hi in segs])
    q = np.array([max(np.mean(x_q[lo:hi]), 0.0) for lo, hi in segs])
    p[~p_free] = 0.0
    q[~q_free] = 0.0
    for bi, (s, e, members) in enumerate(tx_bands):
        if e_tx[bi] > 0:
            cur = np.dot(n_s[members], p[members])
            p[members] = p[members] * (e_tx[bi] / cur) if cur > 0 else \
                e_tx[bi] / np.sum(n_s[members])
    for bi, (s, e, members) in enumerate(rx_bands):
        if e_rx[bi] > 0:
            cur = np.dot(n_s[members], q[members])
            q[members] = q[members] * (e_rx[bi] / cur) if cur > 0 else \
                e_rx[bi] / np.sum(n_s[members])

    idx_p = {i: j for j, i in enumerate(np.nonzero(p_free)[0])}
    np_free = len(idx_p)
    idx_q = {i: np_free + j for j, i in enumerate(np.nonzero(q_free)[0])}
    nq_free = len(idx_q)
    n_lam = len(tx_live)
    n_mu = len(rx_live)
    n_var = np_free + nq_free + n_lam + n_mu

    lam = np.zeros(n_lam)
    mu = np.zeros(n_mu)

    def grads(pv, qv):
        return _envelope_grad(pv, qv, params)

    g_p, g_q = grads(p, q)
    for bi, j in tx_pos.items():
        members = tx_bands[bi][2]
        lam[j] = float(np.mean(g_p[members]))
    for bi, j in rx_pos.items():
        members = rx_bands[bi][2]
        free_members = [i for i in members if q_free[i]]
        mu[j] = float(np.mean(g_q[free_members])) if free_members else 0.0

    scale = max(float(np.max(np.abs(np.concatenate([p, q])))), 1e-12)
    for _ in range(newton_iters):
        g_p, g_q = grads(p, q)
        resid = np.zeros(n_var)
        for i, j in idx_p.items():
            resid[j] = g_p[i] - lam[tx_pos[band_t_of[i]]]
        for i, j in idx_q.items():
            resid[j] = g_q[i] - mu[rx_pos[band_r_of[i]]]
        row = np_free + nq_free
        for j, bi in enumerate(tx_live):
            members = tx_bands[bi][2]
            resid[row + j] = np.dot(n_s[members], p[members]) - e_tx[bi]
        for j, bi in enumerate(rx_live):
            members = rx_bands[bi][2]
            resid[row + n_lam + j] = np.dot(n_s[members], q[members]) - e_rx[bi]
        if float(np.max(np.abs(resid))) < 1e-12 * max(1.0, scale):
            break

        # local Hessian blocks by central differences of the gradient
        h = 1e-6 * (1.0 + np.abs(p))
        gpp1, gqp1 = grads(p + h, q)
        gpp0, gqp0 = grads(np.maximum(p - h, 0.0), q)
        hpp = (gpp1 - gpp0) / (h + np.minimum(p, h))
        hqp = (gqp1 - gqp0) / (h + np.minimum(p, h))
        h = 1e-6 * (1.0 + np.abs(q))
        gpq1, gqq1 = grads(p, q + h)
        gpq0, gqq0 = grads(p, np.maximum(q - h, 0.0))
        hpq = (gpq1 - gpq0) / (h + np.minimum(q, h))
        hqq = (gqq1 - gqq0) / (h + np.minimum(q, h))

        jac = np.zeros((n_var, n_var))
        for i, j in idx_p.items():
            jac[j, j] = hpp[i]
            if i in idx_q:
                jac[j, idx_q[i]] = hpq[i]
            jac[j, np_free + nq_free + tx_pos[band_t_of[i]]] = -1.0
        for i, j in idx_q.items():
            jac[j, j] = hqq[i]
            if i in idx_p:
                jac[j, idx_p[i]] = hqp[i]
            jac[j, np_free + nq_free + n_lam + rx_pos[band_r_of[i]]] = -1.0
        row = np_free + nq_free
        for j, bi in enumerate(tx_live):
            for i in tx_bands[bi][2]:
                if i in idx_p:
                    jac[row + j, idx_p[i]] = n_s[i]
        for j, bi in enumerate(rx_live):
            for i in rx_bands[bi][2]:
                if i in idx_q:
                    jac[row + n_lam + j, idx_q[i]] = n_s[i]

        try:
            step = np.linalg.solve(jac, -resid)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(jac, -resid, rcond=None)
        if not np.all(np.isfinite(step)):
            return None
        # damped update, clipped to the nonnegative orthant
        damp = 1.0
        if float(np.max(np.abs(step[:np_free + nq_free]))) > 0.5 * scale:
            damp = 0.5 * scale / float(np.max(np.abs(step[:np_free + nq_free])))
        for i, j in idx_p.items():
            p[i] = max(p[i] + damp * step[j], 0.0)
        for i, j in idx_q.items():
            q[i] = max(q[i] + damp * step[j], 0.0)
        lam += damp * step[np_free + nq_free:np_free + nq_free + n_lam]
        mu += damp * step[np_free + nq_free + n_lam:]
    else:
        return None

    # exact band sums (snap out the last Newton residual)
    for bi, (s, e, members) in enumerate(tx_bands):
        cur = np.dot(n_s[members], p[members])
        if e_tx[bi] > 0 and cur > 0:
            p[members] *= e_tx[bi] / cur
    for bi, (s, e, members) in enumerate(rx_bands):
        cur = np.dot(n_s[members], q[members])
        if e_rx[bi] > 0 and cur > 0:
            q[members] *= e_rx[bi] / cur

    full_p = np.repeat(p, [hi - lo for lo, hi in segs])
    full_q = np.repeat(q, [hi - lo for lo, hi in segs])
    tol_t = 1e-9 * max(float(np.sum(c_t)), 1e-300)
    tol_r = 1e-9 * max(float(np.sum(c_r)), 1e-300)
    if np.any(np.cumsum(full_p) > cum_t[1:] + tol_t):
        return None
    if np.any(np.cumsum(full_q) > cum_r[1:] + tol_r):
        return None
    return full_p, full_q


def _kkt_polish(x_p, x_q, c_t, c_r, params):
    """Candidate exact optima from segment structures read off the iterate."""
    cands = []
    seen = set()
    for eta_seg in (1e-2, 1e-3, 1e-5):
        for eta_resid in (1e-3, 1e-5, 1e-7):
            st = _detect_structure(x_p, x_q, c_t, c_r, eta_seg, eta_resid)
            if st is None or st in seen:
                continue
            seen.add(st)
            sol = _solve_segment_kkt(st, c_t, c_r, params, x_p, x_q)
            if sol is not None:
                cands.append(sol)
    return cands


def optimize_joint_general(s: Scenario, max_iters: int = 10000,
                           tol: float = 1e-8) -> Policy:
    """Maximize the extra-watt bound over both energy-neutrality polytopes.

    Away-step conditional gradient from the spend-on-arrival vertex, with
    the exact deferral linear oracle, approximate exact line search, and a
    periodic band-structure polish.  Returns the best feasible point whose
    duality gap certifies optimality; raises ConvergenceError (carrying the
    best policy and its gap) otherwise.
    """
    if s.tx_mode != "harvesting":
        raise ValueError("optimize_joint_general requires harvesting mode")
    prof = s.profile
    params = s.params
    e_t, e_r, offset = normalize_profile(prof.e_t, prof.e_r)
    c_t = e_t / (prof.L * prof.T)
    c_r = e_r / prof.L
    k = c_t.size

    def finish(p, q):
        tau = tau_star_vec(p, q, params, "upper_ub")
        return _expand_policy(p, q, tau, offset, "upper_ub")

    best = {"p": c_t.copy(), "q": c_r.copy(),
            "val": _envelope_sum(c_t, c_r, params)}

    def consider(cands):
        for cand_p, cand_q in cands:
            val = _envelope_sum(cand_p, cand_q, params)
            if val > best["val"]:
                best["val"] = val
                best["p"], best["q"] = cand_p, cand_q

    def best_gap() -> float:
        gap, _, _ = _fw_gap(best["p"], best["q"], c_t, c_r, params)
        return gap

    def polish(x_p, x_q, deep: bool) -> float:
        consider([(x_p.copy(), x_q.copy())])
        consider(_polish_candidates(x_p, x_q, c_t, c_r))
        gap = best_gap()
        if gap > tol and deep:
            consider(_kkt_polish(x_p, x_q, c_t, c_r, params))
            gap = best_gap()
        return gap

    gap_best = polish(c_t.copy(), c_r.copy(), deep=False)
    if gap_best <= tol:
        return finish(best["p"], best["q"])

    # away-step conditional gradient from the spend-on-arrival vertex
    ident = tuple(range(k))
    atoms = {(ident, ident): 1.0}
    vectors = {ident: {"t": c_t.copy(), "r": c_r.copy()}}
    x_p, x_q = c_t.copy(), c_r.copy()

    def atom_vec(key):
        kp, kq = key
        return vectors[kp]["t"], vectors[kq]["r"]

    for it in range(max_iters):
        g_p, g_q = _envelope_grad(x_p, x_q, params)
        ap = _lmo_assignment(g_p)
        aq = _lmo_assignment(g_q)
        kp, kq = tuple(ap), tuple(aq)
        if kp not in vectors:
            vectors[kp] = {"t": _assignment_vector(ap, c_t), "r": None}
        elif vectors[kp]["t"] is None:
            vectors[kp]["t"] = _assignment_vector(ap, c_t)
        if kq not in vectors:
            vectors[kq] = {"t": None, "r": _assignment_vector(aq, c_r)}
        elif vectors[kq]["r"] is None:
            vectors[kq]["r"] = _assignment_vector(aq, c_r)
        v_p = vectors[kp]["t"]
        v_q = vectors[kq]["r"]
        gap_fw = float(np.dot(g_p, v_p - x_p) + np.dot(g_q, v_q - x_q))

        polish_now = gap_fw <= tol or (it % 20 == 19)
        if polish_now:
            gap_best = polish(x_p, x_q, deep=it >= 19)
            if gap_best <= tol:
                return finish(best["p"], best["q"])
            if gap_fw <= tol:
                # iterate converged but polish did not certify; accept the
                # stronger of the two points
                return finish(best["p"], best["q"])

        # away atom: active atom most aligned with the gradient's negative
        away_key = None
        away_score = math.inf
        for key, w in atoms.items():
            avp, avq = atom_vec(key)
            score = float(np.dot(g_p, avp) + np.dot(g_q, avq))
            if score < away_score:
                away_score = score
                away_key = key
        a_p, a_q = atom_vec(away_key)
        gap_away = float(np.dot(g_p, x_p - a_p) + np.dot(g_q, x_q - a_q))

        w_away = atoms[away_key]
        if gap_fw >= gap_away or w_away >= 1.0 - 1e-14:
            d_p, d_q = v_p - x_p, v_q - x_q
            gamma_max = 1.0
            step_kind = "fw"
        else:
            d_p, d_q = x_p - a_p, x_q - a_q
            gamma_max = w_away / (1.0 - w_away)
            step_kind = "away"
        gamma = _line_search(x_p, x_q, d_p, d_q, gamma_max, params)
        if gamma <= 0.0:
            continue
        x_p = np.maximum(x_p + gamma * d_p, 0.0)
        x_q = np.maximum(x_q + gamma * d_q, 0.0)
        if step_kind == "fw":
            for key in list(atoms):
                atoms[key] *= (1.0 - gamma)
            atoms[(kp, kq)] = atoms.get((kp, kq), 0.0) + gamma
        else:
            for key in list(atoms):
                atoms[key] *= (1.0 + gamma)
            atoms[away_key] -= gamma
        atoms = {key: w for key, w in atoms.items() if w > 1e-15}

    gap_best = polish(x_p, x_q, deep=True)
    policy = finish(best["p"], best["q"])
    if gap_best <= tol:
        return policy
    raise ConvergenceError(
        f"duality gap {gap_best:.3e} above tolerance {tol:.1e} "
        f"after {max_iters} iterations", policy, gap_best)


# ---------------------------------------------------------------------------
# optimality certificates
# ---------------------------------------------------------------------------

def certify_optimality(pol: Policy, s: Scenario,
                       tol: float | None = None) -> CertificateReport:
    """Check the structural optimality conditions of a feasible policy.

    (i) p and q non-decreasing; (ii) wherever the optimized bound value
    changes between adjacent intervals, some energy buffer is empty in
    between; (iii) terminal equality at every harvesting buffer.
    """
    prof = s.profile
    if tol is None:
        total = float(np.sum(prof.e_r))
        if s.tx_mode == "harvesting":
            total += float(np.sum(prof.e_t))
        tol = 1e-6 * max(total, 1e-12)

    mono_viol = [int(k) for k in range(pol.K - 1)
                 if pol.p[k + 1] < pol.p[k] - tol
                 or pol.q[k + 1] < pol.q[k] - tol]

    kind = pol.objective_kind if pol.objective_kind != "exact" else "upper_ub"
    r = envelope_value(pol.p, pol.q, s.params, kind)

    resid_r = np.cumsum(prof.e_r) - prof.L * np.cumsum(pol.q)
    if s.tx_mode == "harvesting":
        resid_t = np.cumsum(prof.e_t) - prof.L * prof.T * np.cumsum(pol.p)
    else:
        resid_t = None

    buf_viol = []
    for k in range(pol.K - 1):
        if abs(r[k + 1] - r[k]) > tol:
            emptied = resid_r[k] <= tol
            if resid_t is not None:
                emptied = emptied or resid_t[k] <= tol
            if not emptied:
                buf_viol.append(k)

    terminal = resid_r[-1] <= tol
    if resid_t is not None:
        terminal = terminal and resid_t[-1] <= tol

    return CertificateReport(
        monotone=not mono_viol,
        buffer_emptying=not buf_viol,
        terminal_equality=bool(terminal),
        monotone_violations=tuple(mono_viol),
        buffer_violations=tuple(buf_viol))
