import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg

from proxybridge.numerics import (DimensionError, SingularMatrixError, hadamard,
                                  reg_factorize, reg_solve, residual_norm, symmetrize)


def random_spd(rng, n, cond=None):
    q, _ = np.linalg.qr(rng.normal(size=(n, n)))
    ev = rng.uniform(0.1, 1.0, n) if cond is None else np.geomspace(1.0, 1.0 / cond, n)
    return (q * ev) @ q.T


def test_hadamard_examples():
    assert np.array_equal(hadamard(np.eye(2), np.eye(2)), np.eye(2))
    x = np.array([[1.5, -2.0], [0.25, 7.0]])
    assert np.array_equal(hadamard(np.ones((2, 2)), x), x)
    assert np.array_equal(hadamard([[1, 2], [3, 4]], [[2, 0], [1, 5]]), [[2, 0], [3, 20]])


def test_hadamard_shape_mismatch():
    with pytest.raises(DimensionError):
        hadamard(np.ones((2, 2)), np.ones((2, 3)))


def test_reg_factorize_examples():
    f = reg_factorize(np.eye(2), 1.0)
    assert np.allclose(reg_solve(f, [1.0, 0.0]), [0.5, 0.0])
    f = reg_factorize(np.zeros((2, 2)), 2.0)
    rhs = np.array([[3.0, -1.0], [4.0, 2.0]])
    assert np.allclose(reg_solve(f, rhs), rhs / 2)
    f = reg_factorize([[2.0, 1.0], [1.0, 2.0]], 0.0)
    x = reg_solve(f, [1.0, 1.0])
    assert np.allclose(x, [1 / 3, 1 / 3], atol=1e-14)
    assert np.allclose(x, np.linalg.solve([[2.0, 1.0], [1.0, 2.0]], [1.0, 1.0]))


def test_reg_solve_examples(rng):
    rhs = rng.normal(size=(3, 2))
    assert np.allclose(reg_solve(reg_factorize(np.eye(3), 0.0), rhs), rhs)
    f = reg_factorize(np.diag([1.0, 3.0]), 1.0)
    assert np.allclose(reg_solve(f, [2.0, 8.0]), [1.0, 2.0])
    A = random_spd(rng, 5)
    f = reg_factorize(A, 0.0)
    b = rng.normal(size=(5, 3))
    assert residual_norm(f, reg_solve(f, b), b) <= 1e-8 * max(1, np.linalg.norm(b))


def test_reg_solve_dimension_error():
    with pytest.raises(DimensionError):
        reg_solve(reg_factorize(np.eye(3), 1.0), np.ones(2))


def test_asymmetry_is_symmetrized_within_tolerance():
    base = np.array([[2.0, 1.0], [1.0 + 1e-13, 2.0]])
    f = reg_factorize(base, 0.0)
    assert np.array_equal(f.base, f.base.T)
    with pytest.raises(DimensionError):
        symmetrize(np.array([[1.0, 0.0], [1.0, 1.0]]))


def test_jitter_rescues_rank_deficient_base():
    v = np.array([1.0, 1.0, 1.0])
    base = np.outer(v, v)  # rank one, duplicated rows
    f = reg_factorize(base, 0.0)
    assert f.jitter > 0
    assert f.jitter <= 1e-4 * np.trace(base) / 3


def test_jitter_exhausted_raises():
    with pytest.raises(SingularMatrixError):
        reg_factorize(-np.eye(3), 0.0)


def test_negative_shift_rejected():
    with pytest.raises(ValueError):
        reg_factorize(np.eye(2), -1.0)


def test_factor_is_read_only():
    f = reg_factorize(np.eye(2), 1.0)
    with pytest.raises(ValueError):
        f.base[0, 0] = 5.0


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 50), seed=st.integers(0, 2**32 - 1),
       shift=st.floats(0.0, 10.0))
def test_residual_bound_random_spd(n, seed, shift):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n)
    f = reg_factorize(A, shift)
    rhs = rng.normal(size=(n, 2))
    x = reg_solve(f, rhs)
    assert residual_norm(f, x, rhs) <= 1e-8 * max(1.0, np.linalg.norm(rhs))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 30), seed=st.integers(0, 2**32 - 1),
       log_cond=st.floats(0.0, 6.0))
def test_recovers_truth_for_well_conditioned(n, seed, log_cond):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, n, cond=10 ** log_cond)
    x_true = rng.normal(size=n)
    x = reg_solve(reg_factorize(A, 0.0), A @ x_true)
    assert np.linalg.norm(x - x_true) <= 1e-6 * np.linalg.norm(x_true)


rationals = st.integers(-64, 64).map(lambda k: k / 8)


@settings(max_examples=50, deadline=None)
@given(st.lists(rationals, min_size=12, max_size=12))
def test_hadamard_commutative_associative_exact(vals):
    a, b, c = (np.array(vals[i:i + 4]).reshape(2, 2) for i in (0, 4, 8))
    assert np.array_equal(hadamard(a, b), hadamard(b, a))
    assert np.array_equal(hadamard(hadamard(a, b), c), hadamard(a, hadamard(b, c)))


def test_matches_scipy_solve(rng):
    A = random_spd(rng, 8)
    b = rng.normal(size=8)
    assert np.allclose(reg_solve(reg_factorize(A, 0.3), b),
                       linalg.solve(A + 0.3 * np.eye(8), b), rtol=1e-10)
