import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from proxybridge.kernel import (InsufficientDataError, LengthScales, gram,
                                kernel_config_from, median_heuristic,
                                median_heuristic_columnwise)
from proxybridge.numerics import DimensionError


def test_median_heuristic_examples():
    assert np.isclose(median_heuristic([0.0, 2.0]).values[0], np.sqrt(2))
    assert median_heuristic([0.0, 0.0, 0.0]).values[0] == 1.0
    assert np.isclose(median_heuristic([0.0, 1.0, 3.0]).values[0] ** 2, 2.0)


def test_even_count_median_averages_central_values():
    # sq dists {1, 4, 9, 1, 4, 1} -> sorted 1,1,1,4,4,9 -> median 2.5
    ls = median_heuristic([0.0, 1.0, 2.0, 3.0])
    assert np.isclose(ls.values[0] ** 2, 1.25)


def test_median_heuristic_needs_two_points():
    with pytest.raises(InsufficientDataError):
        median_heuristic([[1.0, 2.0]])


def test_columnwise_examples(rng):
    x = rng.normal(size=(9, 1))
    assert np.isclose(median_heuristic_columnwise(x).values[0], median_heuristic(x).values[0])
    x = np.column_stack([rng.normal(size=7), np.full(7, 3.0)])
    ls = median_heuristic_columnwise(x)
    assert ls.values[1] == 1.0
    assert np.isclose(ls.values[0], median_heuristic(x[:, :1]).values[0])
    ls = median_heuristic_columnwise([[0.0, 0.0], [2.0, 4.0]])
    assert np.allclose(ls.values, [np.sqrt(2), 2 * np.sqrt(2)])


def test_gram_examples(rng):
    x = rng.normal(size=(6, 2))
    ls = median_heuristic(x)
    assert np.allclose(np.diag(gram(x, x, ls)), 1.0)
    assert np.isclose(gram([[0.0]], [[2.0]], LengthScales.isotropic(np.sqrt(2)))[0, 0],
                      np.exp(-1.0))
    iso = gram(x, x, LengthScales.isotropic(0.7))
    col = gram(x, x, LengthScales.columnwise([0.7, 0.7]))
    assert np.allclose(iso, col, atol=1e-15)


def test_gram_dimension_mismatch():
    with pytest.raises(DimensionError):
        gram(np.ones((2, 2)), np.ones((2, 3)), LengthScales.isotropic(1.0))
    with pytest.raises(DimensionError):
        gram(np.ones((2, 2)), np.ones((2, 2)), LengthScales.columnwise([1.0, 1.0, 1.0]))


def test_lengthscales_must_be_positive():
    with pytest.raises(ValueError):
        LengthScales.isotropic(0.0)
    with pytest.raises(ValueError):
        LengthScales.columnwise([1.0, np.nan])


def test_config_uses_pooled_samples(rng):
    a, w, z = rng.normal(size=(10, 1)), rng.normal(size=(10, 2)), rng.normal(size=(10, 2))
    kc = kernel_config_from(a, w, z, columnwise_w=True)
    assert kc.w.ls.mode == "columnwise" and len(kc.w.ls.values) == 2
    assert kc.a.ls == median_heuristic(a)


points = arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 3)),
                elements=st.floats(-10, 10, allow_nan=False, width=64))


@settings(max_examples=60, deadline=None)
@given(x=points)
def test_gram_symmetric_psd_bounded(x):
    ls = median_heuristic(x)
    k = gram(x, x, ls)
    assert np.array_equal(k, k.T)
    assert np.all(k >= 0)  # exp may underflow to exactly 0 for far-apart points
    assert np.all(k <= 1.0)
    assert np.linalg.eigvalsh(k).min() >= -1e-8 * np.trace(k)


@settings(max_examples=60, deadline=None)
@given(x=points, y=points, seed=st.integers(0, 1000))
def test_gram_transpose(x, y, seed):
    if x.shape[1] != y.shape[1]:
        y = np.resize(y, (y.shape[0], x.shape[1]))
    ls = LengthScales.isotropic(1.0 + seed / 100)
    assert np.max(np.abs(gram(x, y, ls).T - gram(y, x, ls))) <= 1e-15


@settings(max_examples=60, deadline=None)
@given(x=points, shift=st.floats(-5, 5), seed=st.integers(0, 1000))
def test_median_heuristic_invariances(x, shift, seed):
    base = median_heuristic(x).values[0]
    perm = np.random.default_rng(seed).permutation(x.shape[0])
    assert median_heuristic(x[perm]).values[0] == base
    assert np.isclose(median_heuristic(x + shift).values[0], base, rtol=1e-9, atol=1e-9) \
        or base == 1.0
