import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from c2h.numerics import ContractError, SeededRng, hungarian, rng_gaussian, sym_eigen


def _cubic_roots(m):
    # characteristic polynomial of a symmetric 3x3, solved by the trigonometric formula
    a = np.asarray(m, dtype=float)
    c2 = -np.trace(a)
    c1 = (a[0, 0] * a[1, 1] - a[0, 1] ** 2) + (a[0, 0] * a[2, 2] - a[0, 2] ** 2) + (a[1, 1] * a[2, 2] - a[1, 2] ** 2)
    c0 = -np.linalg.det(a)
    # x^3 + c2 x^2 + c1 x + c0, depressed with x = t - c2/3
    p = c1 - c2**2 / 3
    q = 2 * c2**3 / 27 - c2 * c1 / 3 + c0
    r = 2 * math.sqrt(-p / 3)
    phi = math.acos(max(-1.0, min(1.0, 3 * q / (p * r))))
    roots = [r * math.cos((phi - 2 * math.pi * k) / 3) - c2 / 3 for k in range(3)]
    return sorted(roots, reverse=True)


def test_eigen_identity():
    vals, vecs = sym_eigen(np.eye(3))
    assert np.allclose(vals, [1, 1, 1])
    assert np.allclose(vecs.T @ vecs, np.eye(3), atol=1e-10)


def test_eigen_diagonal():
    vals, vecs = sym_eigen(np.diag([1.0, 3.0]))
    assert np.allclose(vals, [3, 1])
    assert np.allclose(np.abs(vecs), [[0, 1], [1, 0]])


@pytest.mark.parametrize("seed", range(5))
def test_eigen_matches_cubic_roots(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 3))
    m = a + a.T
    vals, _ = sym_eigen(m)
    assert np.allclose(vals, _cubic_roots(m), atol=1e-9)


@pytest.mark.parametrize("n", range(1, 9))
def test_eigen_reconstruction(n):
    rng = np.random.default_rng(100 + n)
    a = rng.normal(size=(n, n))
    m = a + a.T
    vals, vecs = sym_eigen(m)
    assert np.all(np.diff(vals) <= 0)
    assert np.max(np.abs(vecs.T @ vecs - np.eye(n))) < 1e-10
    assert np.max(np.abs(vecs @ np.diag(vals) @ vecs.T - m)) < 1e-8
    assert np.max(np.abs(m @ vecs - vecs * vals)) < 1e-8


def test_eigen_rejects_bad_input():
    with pytest.raises(ContractError):
        sym_eigen(np.ones((2, 3)))
    with pytest.raises(ContractError):
        sym_eigen([[1.0, 2.0], [0.0, 1.0]])


def _brute_assignment(c):
    c = np.asarray(c)
    n, m = c.shape
    best = math.inf
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            best = min(best, sum(c[i, j] for i, j in enumerate(cols)))
    else:
        for rows in itertools.permutations(range(n), m):
            best = min(best, sum(c[i, j] for j, i in enumerate(rows)))
    return best


def test_hungarian_small():
    mapping, total = hungarian([[1, 2], [2, 1]])
    assert mapping == {0: 0, 1: 1}
    assert total == 2


def test_hungarian_diagonal_zero():
    c = np.ones((4, 4)) - np.eye(4)
    mapping, total = hungarian(c)
    assert mapping == {i: i for i in range(4)}
    assert total == 0


@pytest.mark.parametrize("shape", [(n, n) for n in range(1, 7)] + [(2, 5), (5, 3), (6, 2), (3, 6)])
@pytest.mark.parametrize("seed", range(4))
def test_hungarian_matches_enumeration(shape, seed):
    rng = np.random.default_rng(seed * 31 + shape[0] * 7 + shape[1])
    c = rng.integers(-5, 10, size=shape).astype(float) + rng.uniform(size=shape)
    mapping, total = hungarian(c)
    assert len(set(mapping.values())) == len(mapping) == min(shape)
    assert total == pytest.approx(_brute_assignment(c), abs=1e-12)


def test_hungarian_empty():
    with pytest.raises(ContractError):
        hungarian(np.zeros((0, 0)))


def test_rng_determinism():
    assert rng_gaussian(SeededRng(7)) == rng_gaussian(SeededRng(7))
    assert rng_gaussian(SeededRng(7)) != rng_gaussian(SeededRng(8))
    assert np.array_equal(SeededRng(3).normal(11), SeededRng(3).normal(11))


def test_rng_moments():
    rng = SeededRng(2024)
    z = np.array([rng.gaussian() for _ in range(100_000)])
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1.0) < 0.05
    z = SeededRng(5).normal(100_000)
    assert abs(z.mean()) < 0.02
    assert abs(z.var() - 1.0) < 0.05


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 20))
def test_rng_streams_reproducible(seed, n):
    a, b = SeededRng(seed), SeededRng(seed)
    assert np.array_equal(a.uniform(n), b.uniform(n))
    assert a.child().seed == b.child().seed
