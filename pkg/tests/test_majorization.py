import numpy as np
import pytest

from ehfo.majorization import (LengthMismatchError, edmundson_madansky_bound,
                               is_doubly_stochastic, is_majorized,
                               random_doubly_stochastic, schur_test,
                               t_transform_chain)

CONCAVE_FAMILY = [np.log1p, np.sqrt, lambda v: -v ** 2,
                  lambda v: np.minimum(v, 1.5)]


def test_is_majorized_examples():
    assert is_majorized([2, 2], [1, 3])
    assert not is_majorized([1, 3], [2, 2])
    assert is_majorized([1.5, 1.5, 3], [3, 0, 3])
    assert is_majorized([1, 2, 3], [3, 2, 1])  # permutation invariance
    with pytest.raises(LengthMismatchError):
        is_majorized([1, 2], [1, 2, 3])


def test_majorization_transitivity():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(2, 7))
        z = rng.uniform(0, 5, n)
        y = z @ random_doubly_stochastic(n, rng)
        x = y @ random_doubly_stochastic(n, rng)
        assert is_majorized(y, z)
        assert is_majorized(x, y)
        assert is_majorized(x, z)


def test_is_doubly_stochastic():
    assert is_doubly_stochastic(np.eye(4))
    assert is_doubly_stochastic(np.full((3, 3), 1 / 3))
    bad = np.eye(3)
    bad[0, 0] = 0.9
    assert not is_doubly_stochastic(bad)
    assert not is_doubly_stochastic(np.ones((2, 3)))
    neg = np.array([[1.5, -0.5], [-0.5, 1.5]])
    assert not is_doubly_stochastic(neg)


def test_schur_probe():
    assert schur_test([2, 2], [1, 3], CONCAVE_FAMILY)
    assert schur_test([1, 3], [1, 3], CONCAVE_FAMILY)
    # not majorized in either direction still cannot be "proved"; the probe
    # only falsifies: y more spread than x fails the probe with x,y swapped
    assert not schur_test([1, 3], [2, 2], [lambda v: -v ** 2])


def test_schur_probe_random_concave_functions():
    rng = np.random.default_rng(23)
    for _ in range(50):
        n = int(rng.integers(2, 6))
        y = rng.uniform(0, 4, n)
        x = y @ random_doubly_stochastic(n, rng)
        # concave quadratics capped by linear pieces
        fams = []
        for _ in range(50):
            a = rng.uniform(0.1, 2.0)
            b = rng.uniform(-1.0, 1.0)
            c = rng.uniform(0.5, 3.0)
            fams.append(lambda v, a=a, b=b, c=c:
                        np.minimum(-a * (v - b) ** 2, c * v))
        assert schur_test(x, y, fams)


def test_t_transform_equivalence_small_n():
    # x majorized by y <-> x = yD for doubly stochastic D (checked n <= 4)
    rng = np.random.default_rng(42)
    for _ in range(300):
        n = int(rng.integers(2, 5))
        y = rng.uniform(0, 5, n)
        d0 = random_doubly_stochastic(n, rng)
        x = y @ d0
        assert is_majorized(x, y, 1e-9)
        d = t_transform_chain(x, y)
        assert is_doubly_stochastic(d, 1e-9)
        assert np.allclose(y @ d, x, atol=1e-8)


def test_matrix_majorization_column_probe():
    # for X = Y D with D doubly stochastic, concave column functionals of X
    # dominate those of Y
    rng = np.random.default_rng(5)
    for _ in range(100):
        m = int(rng.integers(1, 4))
        n = int(rng.integers(2, 6))
        y = rng.uniform(-2, 2, (m, n))
        d = random_doubly_stochastic(n, rng)
        x = y @ d
        for _ in range(5):
            a = rng.uniform(0.1, 1.0, (m, m))
            psd = a @ a.T
            c = rng.uniform(-1, 1, m)

            def g(v):
                return -v @ psd @ v + c @ v

            gx = sum(g(x[:, j]) for j in range(n))
            gy = sum(g(y[:, j]) for j in range(n))
            assert gx >= gy - 1e-9


def test_edmundson_madansky_values():
    assert edmundson_madansky_bound(lambda x: x * x, 0, 1, 0.5) == 0.5
    # linear f makes the bound tight at f(mu)
    assert edmundson_madansky_bound(lambda x: 3 * x + 1, -1, 2, 0.3) == \
        pytest.approx(1.9, abs=1e-12)
    # analytic moment: uniform on [0,1], f = x^2: bound 0.5 >= 1/3
    assert edmundson_madansky_bound(lambda x: x * x, 0, 1, 0.5) >= 1 / 3
    with pytest.raises(ValueError):
        edmundson_madansky_bound(lambda x: x, 0, 1, 1.5)


def test_edmundson_madansky_dominates_sampling():
    rng = np.random.default_rng(17)
    for _ in range(100):
        a, width = rng.uniform(-2, 2), rng.uniform(0.5, 3)
        b = a + width
        # random convex piecewise-linear function
        slopes = np.sort(rng.uniform(-3, 3, 4))
        knots = np.sort(rng.uniform(a, b, 3))

        def f(x):
            val = slopes[0] * (x - a)
            for s0, s1, k in zip(slopes, slopes[1:], knots):
                val += (s1 - s0) * np.maximum(x - k, 0.0)
            return val

        samples = rng.uniform(a, b, 2000)
        mu = float(np.mean(samples))
        bound = edmundson_madansky_bound(f, a, b, mu)
        assert bound >= float(np.mean(f(samples))) - 1e-9
