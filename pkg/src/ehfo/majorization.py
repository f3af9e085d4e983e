"""Vector and matrix majorization predicates and convexity bounds used to
certify optimizer outputs.

``x`` is majorized by ``y`` when every prefix sum of the descending-sorted
entries of ``x`` is dominated by the corresponding prefix of ``y`` and the
totals coincide; equivalently x = yD for a doubly stochastic D.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DEFAULT_TOL = 1e-9


class LengthMismatchError(ValueError):
    """Vectors of different lengths cannot be compared."""


def _as_vector(x: Sequence[float]) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError("expected a non-empty 1-D vector")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector entries must be finite")
    return arr


def is_majorized(x: Sequence[float], y: Sequence[float],
                 tol: float = DEFAULT_TOL) -> bool:
    """True iff x is majorized by y (x less spread out than y)."""
    xv = _as_vector(x)
    yv = _as_vector(y)
    if xv.size != yv.size:
        raise LengthMismatchError(f"lengths differ: {xv.size} vs {yv.size}")
    xs = np.sort(xv)[::-1]
    ys = np.sort(yv)[::-1]
    cx = np.cumsum(xs)
    cy = np.cumsum(ys)
    if abs(cx[-1] - cy[-1]) > tol:
        return False
    return bool(np.all(cx[:-1] <= cy[:-1] + tol))


def is_doubly_stochastic(d: np.ndarray, tol: float = DEFAULT_TOL) -> bool:
    """True iff d is square, entrywise >= -tol, with unit row/column sums."""
    m = np.asarray(d, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        return False
    if np.any(m < -tol):
        return False
    ones = np.ones(m.shape[0])
    return (bool(np.all(np.abs(m.sum(axis=0) - ones) <= tol))
            and bool(np.all(np.abs(m.sum(axis=1) - ones) <= tol)))


def schur_test(x: Sequence[float], y: Sequence[float],
               g_family: Sequence[Callable[[np.ndarray], np.ndarray]],
               tol: float = DEFAULT_TOL) -> bool:
    """Necessary-condition probe for x majorized by y.

    Checks sum g(x_i) >= sum g(y_i) - tol for every concave g in the family.
    A False result falsifies majorization; True alone does not prove it.
    """
    xv = _as_vector(x)
    yv = _as_vector(y)
    if xv.size != yv.size:
        raise LengthMismatchError(f"lengths differ: {xv.size} vs {yv.size}")
    for g in g_family:
        gx = float(np.sum(g(xv)))
        gy = float(np.sum(g(yv)))
        if gx < gy - tol:
            return False
    return True


def edmundson_madansky_bound(f: Callable[[float], float], a: float, b: float,
                             mu: float) -> float:
    """Upper bound on E[f(X)] for convex f and any X on [a, b] with mean mu.

    Returns the chord value ((b-mu) f(a) + (mu-a) f(b)) / (b-a).
    """
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    if not (a <= mu <= b):
        raise ValueError(f"mean {mu} outside [{a}, {b}]")
    w = b - a
    return ((b - mu) * f(a) + (mu - a) * f(b)) / w


def t_transform_chain(x: Sequence[float], y: Sequence[float],
                      tol: float = 1e-12) -> np.ndarray:
    """Doubly stochastic D with x = y @ D, built from a T-transform sequence.

    Requires x majorized by y.  Each T-transform is lam*I + (1-lam)*Q for a
    transposition Q; at most n-1 of them take the sorted y to the sorted x,
    and permutation factors map back to the original orders.
    """
    xv = _as_vector(x)
    yv = _as_vector(y)
    n = xv.size
    if yv.size != n:
        raise LengthMismatchError(f"lengths differ: {n} vs {yv.size}")
    if not is_majorized(xv, yv, tol=max(tol, 1e-9)):
        raise ValueError("x is not majorized by y")

    ox = np.argsort(-xv, kind="stable")
    oy = np.argsort(-yv, kind="stable")
    xs = xv[ox]
    cur = yv[oy].copy()

    # row-vector convention throughout: (v @ P)[i] = sum_k v[k] P[k, i]
    p_sort = np.zeros((n, n))
    p_sort[oy, np.arange(n)] = 1.0  # y @ p_sort == sorted y
    d = p_sort

    scale = max(1.0, float(np.max(np.abs(xs))))
    for _ in range(n):
        diff = cur - xs
        if np.max(np.abs(diff)) <= tol * scale:
            break
        # largest index where cur still exceeds xs, then the first shortfall
        # after it; the classical choice keeps cur sorted and zeroes one more
        # coordinate per step
        pos = np.nonzero(diff > tol * scale)[0]
        if pos.size == 0:
            raise ValueError("T-transform construction failed (not majorized?)")
        k = int(pos[-1])
        neg = np.nonzero(diff[k + 1:] < -tol * scale)[0]
        if neg.size == 0:
            raise ValueError("T-transform construction failed (not majorized?)")
        j = k + 1 + int(neg[0])
        delta = min(cur[k] - xs[k], xs[j] - cur[j])
        lam = 1.0 - delta / (cur[k] - cur[j])
        t = np.eye(n)
        t[k, k] = lam
        t[j, j] = lam
        t[k, j] = 1.0 - lam
        t[j, k] = 1.0 - lam
        cur = cur @ t
        d = d @ t

    # map sorted x back to the original order: (xs @ p_unsort)[i] = xs[rank[i]]
    rank = np.empty(n, dtype=int)
    rank[ox] = np.arange(n)
    p_unsort = np.zeros((n, n))
    p_unsort[rank, np.arange(n)] = 1.0
    return d @ p_unsort


def random_doubly_stochastic(n: int, rng: np.random.Generator,
                             n_perms: int = 8) -> np.ndarray:
    """Random doubly stochastic matrix as a convex mix of permutations."""
    weights = rng.dirichlet(np.ones(n_perms))
    d = np.zeros((n, n))
    for w in weights:
        perm = rng.permutation(n)
        d[np.arange(n), perm] += w
    return d
