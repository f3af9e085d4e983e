"""Harvested-energy profile construction and file I/O.

Profiles hold per-interval harvested energies at the transmitter and the
receiver plus the frame geometry: K intervals of duration delta seconds,
each carrying L frames of T channel uses.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .oea import ProfileError

DEFAULT_L = 18000
DEFAULT_T_USES = 200.0
DEFAULT_DELTA = 3600.0

_HEADER = "k,e_t_joules,e_r_joules"


@dataclass(frozen=True)
class EHProfile:
    """Per-interval harvested energies (Joules) and frame geometry."""

    e_t: np.ndarray
    e_r: np.ndarray
    L: int = DEFAULT_L
    T: float = DEFAULT_T_USES
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        et = np.asarray(self.e_t, dtype=float)
        er = np.asarray(self.e_r, dtype=float)
        if et.ndim != 1 or er.ndim != 1 or et.size < 1:
            raise ProfileError("profiles must be non-empty 1-D energy lists")
        if et.size != er.size:
            raise ProfileError(f"lengths differ: {et.size} vs {er.size}")
        if np.any(et < 0.0) or np.any(er < 0.0):
            raise ProfileError("energies must be >= 0")
        if self.L < 1 or int(self.L) != self.L:
            raise ProfileError(f"L must be an integer >= 1, got {self.L}")
        if not self.T > 0.0 or not self.delta > 0.0:
            raise ProfileError("T and delta must be > 0")
        object.__setattr__(self, "e_t", et)
        object.__setattr__(self, "e_r", er)

    @property
    def K(self) -> int:
        return self.e_t.size

    def scaled(self, scale_t: float = 1.0, scale_r: float = 1.0) -> "EHProfile":
        return EHProfile(self.e_t * scale_t, self.e_r * scale_r,
                         L=self.L, T=self.T, delta=self.delta)


def from_irradiance(irradiance: Sequence[float], area: float, rho: float,
                    delta: float) -> np.ndarray:
    """Harvested energy per interval from irradiance samples (W/m^2).

    e_k = I_k * area * rho * delta; linear in both area and efficiency rho.
    """
    irr = np.asarray(irradiance, dtype=float)
    if np.any(irr < 0.0):
        raise ProfileError("irradiance must be >= 0")
    if not area > 0.0 or not 0.0 < rho <= 1.0 or not delta > 0.0:
        raise ProfileError(
            f"need area > 0, rho in (0,1], delta > 0; got {area}, {rho}, {delta}")
    return irr * area * rho * delta


def synthetic_exponential(K: int, mean_t: float, mean_r: float, seed: int,
                          L: int = DEFAULT_L, T: float = DEFAULT_T_USES,
                          delta: float = DEFAULT_DELTA) -> EHProfile:
    """I.i.d. exponential arrivals at both nodes, seeded and reproducible.

    Raw draws are returned; the sample means are not forced onto the targets.
    """
    if K < 1:
        raise ProfileError(f"K must be >= 1, got {K}")
    if not (mean_t > 0.0 and mean_r > 0.0):
        raise ProfileError("means must be > 0")
    rng = np.random.default_rng(seed)
    # inverse-CDF sampling so that scaling the mean scales the draws
    u_t = rng.random(K)
    u_r = rng.random(K)
    e_t = -mean_t * np.log1p(-u_t)
    e_r = -mean_r * np.log1p(-u_r)
    return EHProfile(e_t, e_r, L=L, T=T, delta=delta)


def hpn_linear(e: float, delta: float, sigma2: float) -> float:
    """Harvested-power-to-noise ratio e / (delta * sigma2), linear scale."""
    if not delta > 0.0 or not sigma2 > 0.0:
        raise ProfileError("delta and sigma2 must be > 0")
    if e < 0.0:
        raise ProfileError(f"energy must be >= 0, got {e}")
    return e / (delta * sigma2)


def hpn(e: float, delta: float, sigma2: float) -> float:
    """Harvested-power-to-noise ratio in dB; -inf for zero energy."""
    lin = hpn_linear(e, delta, sigma2)
    if lin == 0.0:
        return -math.inf
    return 10.0 * math.log10(lin)


def write_profile_csv(path: str | Path, e_t: Sequence[float],
                      e_r: Sequence[float]) -> None:
    """Write a profile table: header `k,e_t_joules,e_r_joules`, LF endings."""
    et = np.asarray(e_t, dtype=float)
    er = np.asarray(e_r, dtype=float)
    if et.size != er.size:
        raise ProfileError(f"lengths differ: {et.size} vs {er.size}")
    lines = [_HEADER]
    for k, (a, b) in enumerate(zip(et, er), start=1):
        lines.append(f"{k},{float(a)!r},{float(b)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8",
                          newline="\n")


def read_profile_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Read a profile table; blank lines and `#` comments are ignored."""
    e_t: list[float] = []
    e_r: list[float] = []
    expected_k = 1
    for lineno, raw in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.lower().replace(" ", "") == _HEADER:
            continue
        parts = line.split(",")
        if len(parts) != 3:
            raise ProfileError(
                f"{path}:{lineno}: expected 3 comma-separated fields, "
                f"got {len(parts)}")
        try:
            k = int(parts[0])
            et = float(parts[1])
            er = float(parts[2])
        except ValueError as exc:
            raise ProfileError(f"{path}:{lineno}: {exc}") from None
        if k != expected_k:
            raise ProfileError(
                f"{path}:{lineno}: interval index {k}, expected {expected_k}")
        if et < 0.0 or er < 0.0:
            raise ProfileError(f"{path}:{lineno}: negative energy")
        e_t.append(et)
        e_r.append(er)
        expected_k += 1
    if not e_t:
        raise ProfileError(f"{path}: no data rows")
    return np.array(e_t), np.array(e_r)


def load_profile(path: str | Path, L: int = DEFAULT_L,
                 T: float = DEFAULT_T_USES,
                 delta: float = DEFAULT_DELTA) -> EHProfile:
    e_t, e_r = read_profile_csv(path)
    return EHProfile(e_t, e_r, L=L, T=T, delta=delta)


def solar_profile(L: int = DEFAULT_L, T: float = DEFAULT_T_USES,
                  delta: float = DEFAULT_DELTA, scale_t: float = 1.0,
                  scale_r: float = 1.0) -> EHProfile:
    """The bundled 24-interval synthetic solar-shaped profile.

    Dawn-first ordering (daylight bump, then night zeros) so the first
    transmit interval always has energy.
    """
    ref = resources.files("ehfo.data").joinpath("solar_24.csv")
    with resources.as_file(ref) as path:
        prof = load_profile(path, L=L, T=T, delta=delta)
    return prof.scaled(scale_t, scale_r)
