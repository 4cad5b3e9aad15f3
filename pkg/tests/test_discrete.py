import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proxybridge.discrete import (CodeBook, CompletenessError, DiscreteJoint, ShapeError,
                                  UndefinedConditionalError, discrete_ate_identified,
                                  discrete_density_ratio, discrete_ground_truth, proxy_matrix,
                                  random_joint, sample_discrete)
from proxybridge.oracles import discrete_suite


def cond(rng, *shape):
    x = rng.uniform(0.1, 1.0, size=shape)
    return x / x.sum(axis=-1, keepdims=True)


def joint_from(rng, cards, y_values=None):
    du, da, dy, dz, dw = cards
    return DiscreteJoint.from_factors(cond(rng, du), cond(rng, du, da), cond(rng, du, da, dy),
                                      cond(rng, du, da, dz), cond(rng, du, dw), y_values)


def loop_truth(j, a):
    # sum over y on the outside, u on the inside: the opposite order to the module
    p = j.p
    total = 0.0
    for y in range(p.shape[2]):
        for u in range(p.shape[0]):
            pu = p[u].sum()
            pua = p[u, a].sum()
            total += j.y_values[y] * p[u, a, y].sum() / pua * pu
    return total


def test_twenty_joints_identity():
    for seed in range(20):
        j = random_joint(seed)
        assert j.cards == (3, 3, 3, 3, 3)
        for a in range(3):
            assert abs(discrete_ate_identified(j, a) - discrete_ground_truth(j, a)) <= 1e-10
        assert all(np.linalg.cond(proxy_matrix(j, a)) <= 1e4 for a in range(3))


def test_suite_report_and_runtime():
    t0 = time.perf_counter()
    checks = discrete_suite(20)
    assert time.perf_counter() - t0 < 1.0
    assert len(checks) == 20 and all(c.passed and c.measured <= 1e-10 for c in checks)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(2, 4), du=st.integers(1, 4))
def test_identity_property(seed, d, du):
    # completeness needs the confounder to have no more levels than the proxies
    du = min(du, d)
    j = joint_from(np.random.default_rng(seed), (du, 2, 3, d, d))
    for a in range(2):
        try:
            ident = discrete_ate_identified(j, a)
        except CompletenessError:
            continue
        if np.linalg.cond(proxy_matrix(j, a)) > 1e6:
            continue
        assert abs(ident - discrete_ground_truth(j, a)) <= 1e-9


def test_ground_truth_matches_loop(rng):
    j = joint_from(rng, (3, 2, 3, 3, 3), y_values=[-1.0, 0.5, 4.0])
    for a in range(2):
        assert abs(discrete_ground_truth(j, a) - loop_truth(j, a)) <= 1e-14


def test_constant_outcome(rng):
    du, da, dz, dw = 3, 2, 3, 3
    py = np.zeros((du, da, 2))
    py[..., 1] = 1.0
    j = DiscreteJoint.from_factors(cond(rng, du), cond(rng, du, da), py, cond(rng, du, da, dz),
                                   cond(rng, du, dw), y_values=[0.0, 7.0])
    assert np.isclose(discrete_ground_truth(j, 0), 7.0, rtol=1e-14)
    assert np.isclose(discrete_ate_identified(j, 1), 7.0, rtol=1e-10)


def test_no_confounding_is_conditional_mean(rng):
    j = joint_from(rng, (1, 3, 3, 3, 3))
    obs = j.observable()
    for a in range(3):
        pya = obs[a].sum(axis=(1, 2))
        cm = pya @ j.y_values / pya.sum()
        assert np.isclose(discrete_ground_truth(j, a), cm, rtol=1e-13)
        assert np.isclose(discrete_ate_identified(j, a), cm, rtol=1e-10)


def test_permutation_proxy_by_hand(rng):
    # W = U and Z = 1 - U, so P(Z|W,a) is the swap matrix
    pu = np.array([0.3, 0.7])
    pa_u = np.array([[0.8, 0.2], [0.25, 0.75]])
    py_ua = cond(rng, 2, 2, 2)
    pz = np.broadcast_to(np.array([[0.0, 1.0], [1.0, 0.0]])[:, None, :], (2, 2, 2))
    j = DiscreteJoint.from_factors(pu, pa_u, py_ua, pz, np.eye(2), y_values=[0.0, 1.0])
    for a in range(2):
        assert np.array_equal(proxy_matrix(j, a), [[0.0, 1.0], [1.0, 0.0]])
        obs = j.observable()
        pw = obs.sum(axis=(0, 1, 2))
        by_hand = 0.0
        for w in range(2):
            cell = obs[a, :, 1 - w, w]          # p(a, y, z = 1 - w, w)
            by_hand += pw[w] * cell[1] / cell.sum()
        assert np.isclose(discrete_ate_identified(j, a), by_hand, rtol=1e-12)
        assert np.isclose(by_hand, discrete_ground_truth(j, a), rtol=1e-12)


def test_shape_and_completeness_errors(rng):
    with pytest.raises(ShapeError):
        discrete_ate_identified(joint_from(rng, (2, 2, 2, 3, 2)), 0)
    # Z ignores U while W and A both track it: singular and inconsistent
    pz = np.broadcast_to(np.array([0.3, 0.7]), (2, 2, 2))
    j = DiscreteJoint.from_factors(np.array([0.5, 0.5]), np.array([[0.9, 0.1], [0.2, 0.8]]),
                                   cond(rng, 2, 2, 2), pz, np.array([[0.9, 0.1], [0.1, 0.9]]))
    with pytest.raises(CompletenessError):
        discrete_ate_identified(j, 0)


def test_undefined_conditional(rng):
    pa_u = np.array([[1.0, 0.0], [0.5, 0.5]])
    j = DiscreteJoint.from_factors(np.array([0.5, 0.5]), pa_u, cond(rng, 2, 2, 2),
                                   cond(rng, 2, 2, 2), cond(rng, 2, 2))
    with pytest.raises(UndefinedConditionalError):
        discrete_ground_truth(j, 1)


def test_density_ratio_examples(rng):
    p = np.zeros((1, 2, 1, 1, 2))
    table = np.array([[0.4, 0.1], [0.2, 0.3]])  # rows w, columns a
    p[0, :, 0, 0, :] = table.T
    j = DiscreteJoint(p)
    assert np.isclose(discrete_density_ratio(j, 0, 0), 0.75, rtol=1e-14)
    ind = joint_from(rng, (1, 3, 2, 2, 3))
    for w in range(3):
        for a in range(3):
            assert np.isclose(discrete_density_ratio(ind, w, a), 1.0, rtol=1e-12)
    p0 = np.zeros((1, 2, 1, 1, 2))
    p0[0, 0, 0, 0, 0] = p0[0, 1, 0, 0, 1] = 0.5
    with pytest.raises(UndefinedConditionalError):
        discrete_density_ratio(DiscreteJoint(p0), 1, 0)


def test_density_ratio_telescopes():
    j = random_joint(4)
    pwa = j.observable().sum(axis=(1, 2))      # (a, w)
    for a in range(3):
        pw_a = pwa[a] / pwa[a].sum()
        tot = sum(discrete_density_ratio(j, w, a) * pw_a[w] for w in range(3))
        assert np.isclose(tot, 1.0, rtol=1e-13)


def test_joint_validation():
    with pytest.raises(ShapeError):
        DiscreteJoint(np.ones((2, 2)) / 4)
    with pytest.raises(ValueError):
        DiscreteJoint(np.full((1, 1, 1, 1, 2), 0.6))
    with pytest.raises(ShapeError):
        DiscreteJoint(np.full((1, 1, 2, 1, 1), 0.5), y_values=[1.0])


def test_factorization_residual(rng):
    assert random_joint(1).factorization_residual() <= 1e-12
    assert joint_from(rng, (2, 3, 2, 2, 2)).factorization_residual() <= 1e-12
    p = rng.uniform(size=(2, 2, 2, 2, 2))
    assert DiscreteJoint(p / p.sum()).factorization_residual() > 1e-6


def test_csv_round_trip():
    j = random_joint(2)
    text = j.to_csv()
    assert text.splitlines()[0] == "u,a,y,z,w,prob"
    back = DiscreteJoint.from_csv(text)
    assert np.array_equal(back.p, j.p)
    with pytest.raises(ValueError):
        DiscreteJoint.from_csv("a,b\n1,2\n")


def test_codebook_injective():
    with pytest.raises(ValueError):
        CodeBook({"a": [0.0, 0.0, 1.0]})


def test_sample_empty_and_point_mass():
    j = random_joint(0)
    d, _ = sample_discrete(j, 0, 1)
    assert d.n == 0
    p = np.zeros((2, 2, 2, 2, 2))
    p[1, 0, 1, 1, 0] = 1.0
    d, lat = sample_discrete(DiscreteJoint(p), 50, 3)
    assert np.all(d.matrix() == d.matrix()[0])
    assert np.all(lat["u_0"] == 1.0)


def test_sample_codebook_and_determinism():
    j = random_joint(0)
    cb = CodeBook({"a": [-1.0, 0.0, 2.0], "z": [0.0, 1.0, 5.0], "w": [3.0, 4.0, 9.0]})
    d, _ = sample_discrete(j, 200, 5, cb)
    assert set(np.unique(d.a)) <= {-1.0, 0.0, 2.0}
    assert set(np.unique(d.w)) <= {3.0, 4.0, 9.0}
    d2, _ = sample_discrete(j, 200, 5, cb)
    assert np.array_equal(d.matrix(), d2.matrix())


def test_sample_law_of_large_numbers():
    from scipy import stats
    j = random_joint(3)
    d, lat = sample_discrete(j, 100_000, 0)
    pu = j.p.sum(axis=(1, 2, 3, 4))
    freq = np.bincount(lat["u_0"].astype(int), minlength=3) / 100_000
    assert np.max(np.abs(freq - pu)) <= 0.01
    pa = j.p.sum(axis=(0, 2, 3, 4))
    counts = np.bincount(d.a[:, 0].astype(int), minlength=3)
    assert stats.chisquare(counts, pa * 100_000).pvalue > 1e-3
