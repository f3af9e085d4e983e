"""Optimal energy allocation: the staircase algorithm that spreads arriving
energy forward as evenly as the arrival-time constraints allow.

The output is piecewise constant on "energy bands" with strictly increasing
levels, satisfies every prefix constraint with equality at the horizon, and
is majorized by every other feasible allocation, which makes it the argmax
of any symmetric concave sum objective over the feasible set.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .majorization import is_majorized


class ProfileError(ValueError):
    """Invalid energy profile (negative entries, all-zero where forbidden)."""


@dataclass(frozen=True)
class BandStructure:
    """Band boundary indices (B_0=0 < B_1 < ... < B_last=K); band i covers
    intervals B_{i-1}+1 .. B_i in 1-based terms."""

    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = self.boundaries
        if len(b) < 2 or b[0] != 0:
            raise ValueError(f"boundaries must start at 0, got {b}")
        if any(y <= x for x, y in zip(b, b[1:])):
            raise ValueError(f"boundaries must be strictly increasing, got {b}")

    @property
    def count(self) -> int:
        return len(self.boundaries) - 1

    def spans(self):
        """Yield (start, stop) half-open 0-based index ranges, one per band."""
        for lo, hi in zip(self.boundaries[:-1], self.boundaries[1:]):
            yield lo, hi


@dataclass(frozen=True)
class Allocation:
    """Per-interval allocation, constant on each band."""

    values: np.ndarray
    bands: BandStructure

    @property
    def levels(self) -> np.ndarray:
        return np.array([self.values[lo] for lo, _ in self.bands.spans()])


def _check_energy(e: Sequence[float]) -> np.ndarray:
    arr = np.asarray(e, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ProfileError("energy vector must be non-empty and 1-D")
    if np.any(arr < 0.0) or not np.all(np.isfinite(arr)):
        raise ProfileError("energies must be finite and >= 0")
    return arr


def oea(e: Sequence[float]) -> Allocation:
    """Staircase allocation of the arrival vector e.

    Band by band, spreads energy equally over the longest prefix-feasible
    stretch starting at the current interval.  O(K^2); K is small in every
    intended use.
    """
    arr = _check_energy(e)
    k_total = arr.size
    cum = np.concatenate(([0.0], np.cumsum(arr)))
    tol = 1e-12 * max(1.0, cum[-1])
    values = np.empty(k_total)
    boundaries = [0]
    start = 0
    while start < k_total:
        end = start + 1
        for k in range(k_total, start, -1):
            level = (cum[k] - cum[start]) / (k - start)
            lens = np.arange(1, k - start + 1)
            if np.all(level * lens <= cum[start + 1:k + 1] - cum[start] + tol):
                end = k
                break
        level = (cum[end] - cum[start]) / (end - start)
        values[start:end] = level
        boundaries.append(end)
        start = end
    return Allocation(values=values, bands=BandStructure(tuple(boundaries)))


def random_feasible(e: Sequence[float], rng: np.random.Generator,
                    n_moves: int | None = None) -> np.ndarray:
    """Random feasible allocation: start from spend-on-arrival and defer
    random amounts of energy to random later intervals.

    Deferral keeps every prefix constraint satisfied and the total unchanged.
    """
    arr = _check_energy(e)
    k = arr.size
    out = arr.copy()
    if k == 1:
        return out
    if n_moves is None:
        n_moves = 2 * k
    for _ in range(n_moves):
        i = int(rng.integers(0, k - 1))
        j = int(rng.integers(i + 1, k))
        delta = rng.uniform(0.0, out[i])
        out[i] -= delta
        out[j] += delta
    return out


def verify_most_majorized(alloc: Allocation, e: Sequence[float],
                          samples: int = 1000, seed: int = 0,
                          tol: float = 1e-9) -> bool:
    """Check alloc against `samples` random feasible allocations.

    Returns True iff alloc is majorized by every sampled vector.
    """
    arr = _check_energy(e)
    rng = np.random.default_rng(seed)
    for _ in range(samples):
        other = random_feasible(arr, rng)
        if not is_majorized(alloc.values, other, tol=tol):
            return False
    return True


def normalize_profile(e_t: Sequence[float], e_r: Sequence[float]
                      ) -> tuple[np.ndarray, np.ndarray, int]:
    """Drop leading zero-energy transmit intervals.

    While the transmitter has harvested nothing it cannot transmit, and
    feedback earns nothing; the receiver just accumulates.  Returns the
    shortened (e_t, e_r) with the accumulated receive energy folded into the
    new first interval, plus the number of dropped intervals.
    """
    et = _check_energy(e_t)
    er = _check_energy(e_r)
    if et.size != er.size:
        raise ProfileError(f"profile lengths differ: {et.size} vs {er.size}")
    if not np.any(et > 0.0):
        raise ProfileError("transmit profile is identically zero")
    first = int(np.argmax(et > 0.0))
    if first == 0:
        return et.copy(), er.copy(), 0
    new_et = et[first:].copy()
    new_er = er[first:].copy()
    new_er[0] = float(np.sum(er[:first + 1]))
    return new_et, new_er, first
