"""Stochastic oracles for the quantization-quality and ergodic-rate formulas.

These simulate the physical model directly: isotropic channel directions,
independent random unit-vector codebooks, and the best-codeword selection
rule.  They validate the closed-form expressions through an independent path.

RNG layout (fixed, documented for cross-run reproducibility): numpy PCG64
generators seeded via SeedSequence(seed).spawn(...), one child stream per
batch; batch size is a deterministic function of (draws, M, b).  Per batch,
channel matrices are drawn before codebooks, as standard normal pairs scaled
by 1/sqrt(2) per complex component.  Batch results are reduced by summing
per-batch sums (order independent).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rate_models import IntervalAllocation, RateModelParams, feedback_bits

_TARGET_BATCH_ELEMS = 1 << 22  # complex entries per batch chunk


@dataclass(frozen=True)
class SimConfig:
    """Seeded Monte-Carlo run: `draws` channel realizations at `b` codebook
    bits and M transmit antennas."""

    seed: int
    draws: int
    M: int
    b: int = 0

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError(f"draws must be >= 1, got {self.draws}")
        if self.M < 2 or int(self.M) != self.M:
            raise ValueError(f"M must be an integer >= 2, got {self.M}")
        if self.b < 0 or int(self.b) != self.b:
            raise ValueError(f"b must be an integer >= 0, got {self.b}")
        if self.b > 16:
            raise ValueError(f"codebook bits capped at 16, got {self.b}")


def _batch_size(draws: int, m: int, b: int) -> int:
    per_draw = (1 << b) * m + m
    return max(1, min(draws, _TARGET_BATCH_ELEMS // per_draw))


def _complex_normal(rng: np.random.Generator, shape) -> np.ndarray:
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return (re + 1j * im) / math.sqrt(2.0)


def _draw_batch(rng: np.random.Generator, n: int, m: int, b: int):
    """Return (gain, nu) for n draws: gain = ||h||^2, nu = max_f |h~^H f|^2."""
    h = _complex_normal(rng, (n, m))
    gain = np.sum(np.abs(h) ** 2, axis=1)
    h_dir = h / np.sqrt(gain)[:, None]
    n_codes = 1 << b
    codebook = _complex_normal(rng, (n, n_codes, m))
    codebook /= np.linalg.norm(codebook, axis=2, keepdims=True)
    inner = np.einsum("km,knm->kn", h_dir.conj(), codebook)
    nu = np.max(np.abs(inner) ** 2, axis=1)
    return gain, nu


def _batched_streams(config: SimConfig):
    batch = _batch_size(config.draws, config.M, config.b)
    n_batches = (config.draws + batch - 1) // batch
    children = np.random.SeedSequence(config.seed).spawn(n_batches)
    done = 0
    for child in children:
        n = min(batch, config.draws - done)
        done += n
        yield np.random.default_rng(child), n


def simulate_nu(config: SimConfig) -> tuple[float, float]:
    """Sample mean and standard error of the quantization quality nu."""
    total = 0.0
    total_sq = 0.0
    for rng, n in _batched_streams(config):
        _, nu = _draw_batch(rng, n, config.M, config.b)
        total += float(np.sum(nu))
        total_sq += float(np.sum(nu * nu))
    n = config.draws
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    std_err = math.sqrt(var / n)
    return mean, std_err


def nu_gain_correlation(config: SimConfig) -> float:
    """Sample correlation between nu and the channel gain (should be ~0)."""
    s_g = s_n = s_gg = s_nn = s_gn = 0.0
    for rng, n in _batched_streams(config):
        gain, nu = _draw_batch(rng, n, config.M, config.b)
        s_g += float(np.sum(gain))
        s_n += float(np.sum(nu))
        s_gg += float(np.sum(gain * gain))
        s_nn += float(np.sum(nu * nu))
        s_gn += float(np.sum(gain * nu))
    n = config.draws
    cov = s_gn / n - (s_g / n) * (s_n / n)
    var_g = s_gg / n - (s_g / n) ** 2
    var_n = s_nn / n - (s_n / n) ** 2
    return cov / math.sqrt(var_g * var_n)


def simulate_rate(a: IntervalAllocation, params: RateModelParams,
                  config: SimConfig) -> tuple[float, float]:
    """Monte-Carlo estimate (mean, std_err) of the per-use ergodic rate.

    The codebook size is 2^round(b) with b implied by (q, tau); the ``b``
    field of the config is ignored here.
    """
    if not a.tau < params.T:
        raise ValueError(f"tau must be < T, got tau={a.tau}, T={params.T}")
    if a.p == 0.0:
        return 0.0, 0.0
    b_real = feedback_bits(a.q, a.tau, params.sigma2) if a.q > 0.0 else 0.0
    b = int(round(b_real))
    if b > 16:
        raise ValueError(f"implied codebook bits {b} exceed the cap of 16")
    t = 1.0 - a.tau / params.T
    snr = a.p / t
    cfg = SimConfig(seed=config.seed, draws=config.draws, M=params.M, b=b)
    total = 0.0
    total_sq = 0.0
    for rng, n in _batched_streams(cfg):
        gain, nu = _draw_batch(rng, n, cfg.M, cfg.b)
        sample = np.log2(1.0 + snr * gain * nu)
        total += float(np.sum(sample))
        total_sq += float(np.sum(sample * sample))
    n = config.draws
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    return t * mean, t * math.sqrt(var / n)
