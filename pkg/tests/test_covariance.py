import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from assocsip.covariance import (IIDCovariance, KernelCovariance, PowerCovariance, ProductGeometric,
                                 block_covariance_constant, block_sum_covariance, check_block_variance,
                                 check_variance_bounds, cross_covariance, exact_sigma2, model_from_dict,
                                 overlap_counts, susceptibility_gap_fit)
from assocsip.fields import tent_kernel
from assocsip.geometry import BlockGeometry, Parameters
from assocsip.lattice import Rect

import oracles

P2 = Parameters(d=2, alpha=3, beta=2, tau=0.8)


def oracle_rho(model):
    if model.kind == "iid":
        return lambda lag: oracles.rho_iid(lag, model.sigma0sq)
    if model.kind == "product_geometric":
        return lambda lag: oracles.rho_product_geometric(lag, model.a, model.sigma0sq)
    if model.kind == "power":
        return lambda lag: oracles.rho_power(lag, model.c, model.p)
    return lambda lag: oracles.rho_kernel(lag, model.kernel)


def all_models(d):
    rng = np.random.default_rng(d)
    return [IIDCovariance(d, 1.7), ProductGeometric(d, 1.3, 0.6), PowerCovariance(d, 0.8, d + 2.5),
            KernelCovariance(rng.uniform(0, 1, size=(3,) * d))]


def random_rect(rng, d, max_side=7, max_lo=12):
    lo = tuple(int(x) for x in rng.integers(0, max_lo, size=d))
    hi = tuple(a + int(rng.integers(1, max_side + 1)) for a in lo)
    return Rect(lo, hi)


def test_product_geometric_closed_forms():
    m = ProductGeometric(2, 1.0, 0.5)
    assert m.sigma2 == 9.0
    assert m.u(0) == 9.0 and m.u(1) == 8.0 and m.u(2) == 5.0
    rho = oracle_rho(m)
    for n in (1, 2, 3):
        assert m.u(n) == pytest.approx(oracles.shell_sum(rho, 2, n, 60), rel=1e-10)


def test_iid_u():
    m = IIDCovariance(3, 2.5)
    assert m.u(0) == 2.5 and m.u(1) == 0.0 and m.u(7) == 0.0


@pytest.mark.parametrize("d", [1, 2, 3])
def test_u_non_increasing_and_shells(d):
    for m in all_models(d):
        us = [m.u(n) for n in range(8)]
        assert all(b <= a + 1e-15 for a, b in zip(us, us[1:]))
        assert us[0] == pytest.approx(m.sigma2, rel=1e-12)
        rho = oracle_rho(m)
        for n in (1, 2, 3):
            inner = sum(rho(i) for i in itertools.product(range(-n + 1, n), repeat=d))
            assert m.sigma2 - m.u(n) == pytest.approx(inner, rel=1e-10, abs=1e-12)


def test_power_u_matches_truncated_sum():
    for d in (1, 2, 3):
        m = PowerCovariance(d, 1.0, d + 3.0)
        for n in (0, 1, 2, 5, 10):
            assert m.u(n) == pytest.approx(m.u_truncated(n), rel=1e-10, abs=1e-12)


def test_power_rejects_divergent():
    with pytest.raises(ValueError):
        PowerCovariance(2, 1.0, 2.0)


def test_sigma2_examples():
    m = ProductGeometric(2, 1.0, 0.5)
    assert exact_sigma2(m, Rect((0, 0), (2, 2))) == pytest.approx(9.0, rel=1e-14)
    assert oracles.double_sum(oracle_rho(m), [((0, 0), (2, 2))]) == pytest.approx(9.0)
    m1 = ProductGeometric(1, 1.0, 0.5)
    assert exact_sigma2(m1, Rect((0,), (2,))) == pytest.approx(3.0, rel=1e-14)
    iid = IIDCovariance(2, 1.7)
    assert exact_sigma2(iid, Rect((3, 1), (8, 5))) == pytest.approx(1.7 * 20, rel=1e-14)
    with pytest.raises(ValueError):
        exact_sigma2(iid, Rect((1, 1), (1, 3)))


@pytest.mark.parametrize("d", [1, 2, 3])
def test_exact_sigma2_against_double_sum(d):
    rng = np.random.default_rng(100 + d)
    for m in all_models(d):
        rho = oracle_rho(m)
        for _ in range(12):
            v = random_rect(rng, d, max_side=(20 if d == 1 else 7 if d == 2 else 4))
            expect = oracles.double_sum(rho, [(v.lo, v.hi)])
            assert exact_sigma2(m, v) == pytest.approx(expect, rel=1e-10)


def test_exact_sigma2_union_against_double_sum():
    rng = np.random.default_rng(5)
    for m in all_models(2):
        rho = oracle_rho(m)
        a = Rect((0, 0), (4, 3))
        b = Rect((5, 1), (8, 6))
        c = Rect((0, 4), (3, 7))
        expect = oracles.double_sum(rho, [(r.lo, r.hi) for r in (a, b, c)])
        assert exact_sigma2(m, [a, b, c]) == pytest.approx(expect, rel=1e-10)
        v1, v2 = random_rect(rng, 2), random_rect(rng, 2)
        cross = oracles.double_sum(rho, [(v1.lo, v1.hi), (v2.lo, v2.hi)])
        both = oracles.double_sum(rho, [(v1.lo, v1.hi)]) + oracles.double_sum(rho, [(v2.lo, v2.hi)])
        assert 2 * cross_covariance(m, v1, v2) == pytest.approx(cross - both, rel=1e-9, abs=1e-9)


def test_overlap_counts_small_case():
    t, c = overlap_counts(0, 3, 0, 2)
    pairs = [(x - y) for x in range(1, 4) for y in range(1, 3)]
    assert dict(zip(t.tolist(), c.tolist())) == {k: float(pairs.count(k)) for k in set(pairs)}


@pytest.mark.parametrize("d", [1, 2, 3])
def test_variance_bounds_random(d):
    rng = np.random.default_rng(9 + d)
    for m in all_models(d):
        for _ in range(30):
            assert check_variance_bounds(m, random_rect(rng, d)).ok


def test_variance_bounds_examples():
    rep = check_variance_bounds(ProductGeometric(2, 1.0, 0.5), Rect((0, 0), (2, 2)))
    assert rep.ratio == pytest.approx(2.25) and rep.ok
    rep = check_variance_bounds(IIDCovariance(2, 3.0), Rect((0, 0), (5, 5)))
    assert rep.ratio == pytest.approx(3.0) and rep.lower == rep.upper == 3.0


def test_block_variance_sandwich():
    geo = BlockGeometry(P2, (5, 5))
    for m in all_models(2):
        for k in geo.good_set:
            assert check_block_variance(m, geo, k).ok


def test_gap_fit_iid_zero():
    fit = susceptibility_gap_fit(IIDCovariance(2), [4, 8, 16])
    assert all(abs(g) < 1e-12 for g in fit.gaps)


def test_gap_fit_power_model():
    fit = susceptibility_gap_fit(PowerCovariance(2, 1.0, 5.0), [8, 16, 32, 64, 128])
    assert fit.target == pytest.approx(-0.5)
    assert fit.fitted_slope <= -0.4
    assert all(g >= 0 for g in fit.gaps)


def test_gap_fit_product_geometric_boundary_rate():
    # the boundary deficit is of order 1/l, so the slope in |V| = l^d is -1/d
    for d in (1, 2):
        fit = susceptibility_gap_fit(ProductGeometric(d, 1.0, 0.5), [8, 16, 32, 64, 128])
        assert fit.fitted_slope == pytest.approx(-1.0 / d, abs=0.03)


def test_gap_fit_needs_three_volumes():
    with pytest.raises(ValueError):
        susceptibility_gap_fit(IIDCovariance(2), [4, 8])


def test_block_sum_covariance_iid_zero():
    geo = BlockGeometry(P2, (4, 4))
    exact, _ = block_sum_covariance(IIDCovariance(2), (2, 2), (3, 3), geo)
    assert exact == 0.0
    with pytest.raises(ValueError):
        block_sum_covariance(IIDCovariance(2), (2, 2), (2, 2), geo)


def test_block_sum_covariance_product_geometric_against_double_sum():
    m = ProductGeometric(2, 1.0, 0.5)
    geo = BlockGeometry(P2, (3, 3))
    exact, expo = block_sum_covariance(m, (1, 1), (2, 1), geo)
    hi, hj = geo.block((1, 1)).H, geo.block((2, 1)).H
    assert hi.shape == (1, 1) and hj.shape == (8, 1)
    rho = oracle_rho(m)
    expect = sum(rho(tuple(a - b for a, b in zip(x, y))) for x in hi.points() for y in hj.points())
    assert exact == pytest.approx(expect, rel=1e-12)
    assert expo == pytest.approx(math.log(2) * 1)


def test_block_sum_covariance_monotone_along_axis():
    m = ProductGeometric(2, 1.0, 0.5)
    geo = BlockGeometry(P2, (6, 6))
    vals = [block_sum_covariance(m, (2, 2), (2, j), geo)[0] for j in range(3, 7)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


def test_block_covariance_constant_finite():
    m = ProductGeometric(2, 1.0, 0.5)
    geo = BlockGeometry(P2, (5, 5))
    pairs = list(itertools.combinations(geo.good_set, 2))
    C = block_covariance_constant(m, geo, pairs)
    assert 0 < C < math.inf


def test_kernel_examples():
    m = KernelCovariance(np.array([1.0, 1.0]))
    assert m.rho(np.array([0])) == 2.0 and m.rho(np.array([1])) == 1.0 and m.rho(np.array([-1])) == 1.0
    assert m.sigma2 == 4.0
    assert KernelCovariance(np.ones((1, 1))).u(1) == 0.0


def test_kernel_sigma2_identity_random():
    rng = np.random.default_rng(11)
    for _ in range(20):
        d = int(rng.integers(1, 4))
        k = rng.uniform(0, 1, size=tuple(int(x) for x in rng.integers(1, 4, size=d)))
        m = KernelCovariance(k)
        lags = itertools.product(*(range(-n + 1, n) for n in k.shape))
        assert sum(oracles.rho_kernel(l, k) for l in lags) == pytest.approx(m.sigma2, rel=1e-12)


def test_model_from_dict_round_trip():
    for m in all_models(2) + [KernelCovariance(tent_kernel(2))]:
        again = model_from_dict(m.to_dict())
        assert again.kind == m.kind and again.sigma2 == pytest.approx(m.sigma2)
    with pytest.raises(ValueError):
        model_from_dict({"kind": "nope", "d": 2})


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["iid", "product_geometric", "power", "kernel_induced"]))
def test_superadditive_on_disjoint_pairs(seed, kind):
    rng = np.random.default_rng(seed)
    m = {k.kind: k for k in all_models(2)}[kind]
    a = random_rect(rng, 2)
    b = Rect((a.hi[0] + int(rng.integers(0, 3)), 0), (a.hi[0] + 5, 4))
    assert exact_sigma2(m, [a, b]) >= exact_sigma2(m, a) + exact_sigma2(m, b) - 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rho_symmetric_nonnegative(seed):
    rng = np.random.default_rng(seed)
    lags = rng.integers(-6, 7, size=(20, 2))
    for m in all_models(2):
        r = m.rho(lags)
        assert np.all(r >= 0)
        np.testing.assert_allclose(r, m.rho(-lags), rtol=1e-15)
