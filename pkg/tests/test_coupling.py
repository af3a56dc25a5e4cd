import itertools
import math
from decimal import Decimal
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from assocsip.coupling import (SCALE_STATS, STANDARD_NORMAL, BlockStat, EmpiricalCDF, block_moments,
                               build_coupled_sheet, calibrate_block_cdfs, compute_block_stats,
                               correlation_with_errors, coupling_error_profile, decompose_core,
                               e_window_shrinkage, empirical_cdf, probe_points, quantile_transform,
                               remainder_maxima, run_coupling_experiment)
from assocsip.covariance import IIDCovariance, KernelCovariance
from assocsip.fields import FieldModel, simulate_field, tent_kernel
from assocsip.geometry import BlockGeometry, Parameters
from assocsip.lattice import g_tau_mask

import oracles

P2 = Parameters(d=2, alpha=3, beta=2, tau=0.8)
IID = FieldModel(2)
MA_GAUSS = FieldModel(2, "moving_average", "gaussian", tent_kernel(2))


def small_setup(model, extent=(130, 130), rep=0, seed=5):
    geo = BlockGeometry(P2, (4, 4))
    sample = simulate_field(model, extent, seed, rep)
    return geo, sample


# -- distribution functions and the transform --------------------------------------------------

def test_empirical_cdf_examples():
    F = empirical_cdf([-1.0, 0.0, 2.0])
    assert F(0.0) == 0.5
    assert F(-5.0) == 0.25 and F(10.0) == 0.75
    with pytest.raises(ValueError):
        empirical_cdf([1.0])
    with pytest.raises(ValueError):
        empirical_cdf([1.0, np.inf])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60), st.lists(st.floats(-1e7, 1e7), min_size=2))
def test_empirical_cdf_monotone_and_clamped(values, xs):
    F = EmpiricalCDF(values)
    R = len(values)
    p = F(np.sort(xs))
    assert np.all(np.diff(p) >= 0)
    assert np.all(p >= 1 / (R + 1)) and np.all(p <= R / (R + 1))


def test_empirical_cdf_of_normal_draws_within_kolmogorov_band():
    x = np.sort(np.random.default_rng(1).standard_normal(10_000))
    F = EmpiricalCDF(x)
    R = x.size
    phi = special.ndtr(x)
    # F jumps at each sample: compare both the post-jump value and the pre-jump value
    after = F(x) * (R + 1) / R
    before = after - 1.0 / R
    assert max(np.max(np.abs(after - phi)), np.max(np.abs(before - phi))) <= 1.63 / math.sqrt(R)


def test_quantile_transform_identity_branch():
    xi = np.array([-40.0, -3.2, 0.0, 1.5, 38.0])
    eta, e = quantile_transform(xi, STANDARD_NORMAL)
    np.testing.assert_array_equal(eta, xi)
    assert np.all(e == 0.0)
    assert quantile_transform(0.7, STANDARD_NORMAL) == (0.7, 0.0)


def test_quantile_transform_at_symmetric_median():
    F = empirical_cdf([-2.0, -1.0, 0.0, 1.0, 2.0, 5.0, -5.0])
    eta, e = quantile_transform(0.0, F)
    assert eta == 0.0 and e == 0.0


def test_quantile_transform_rejects_boundary_probability():
    with pytest.raises(ValueError):
        quantile_transform(0.0, lambda x: 1.0)


def _decimal_normal_pdf(q):
    return math.exp(-q * q / 2) / math.sqrt(2 * math.pi)


@pytest.mark.parametrize("p,q", oracles.NORMAL_QUANTILES)
def test_inverse_normal_against_reference(p, q):
    # the reference is Phi^-1 of the decimal p; the float nearest p shifts the true
    # quantile by (float(p) - p)/phi(q), which is added to the 1e-10 budget
    pf = float(p)
    shift = abs(float(Fraction(pf) - Fraction(Decimal(p))) / _decimal_normal_pdf(float(q)))
    assert abs(special.ndtri(pf) - float(q)) <= 1e-10 + shift


@pytest.mark.parametrize("p,q", oracles.NORMAL_QUANTILES)
def test_normal_cdf_against_reference(p, q):
    assert abs(special.ndtr(float(q)) - float(p)) <= 1e-10


def test_inverse_normal_tail_entries_are_exact_in_floats():
    # the lower tail entries are representable to relative 1e-16, so the check is tight there
    for p, q in oracles.NORMAL_QUANTILES[:4]:
        assert abs(special.ndtri(float(p)) - float(q)) <= 1e-10


# -- block statistics --------------------------------------------------------------------------

def test_iid_block_moments_exact():
    geo = BlockGeometry(P2, (4, 4))
    mom = block_moments(IIDCovariance(2, 2.0), geo, geo.good_set)
    for k, (lam2, tau2) in mom.items():
        blk = geo.block(k)
        assert lam2 == 2.0 * math.prod(x**3 for x in k)
        assert tau2 == 2.0 * blk.I_volume


def test_block_stats_definitions_hold():
    geo, sample = small_setup(MA_GAUSS)
    stats = compute_block_stats(sample, geo, MA_GAUSS.covariance(), 5)
    assert list(stats) == list(geo.blocks_within((130, 130)))
    for k, s in stats.items():
        blk = geo.block(k)
        assert s.u + s.v == pytest.approx(sample.grid.rect_sum(blk.B), rel=1e-9, abs=1e-9)
        assert s.xi == (s.u + s.w) / math.sqrt(s.lambda2 + s.tau2)
        assert s.e == math.sqrt(s.lambda2 + s.tau2) * (s.xi - s.eta)
        assert s.e == 0.0 and s.eta == s.xi
        assert s.volume == blk.B.volume and len(s.v_pieces) == 2


def test_block_stats_reject_mismatched_covariance():
    geo, sample = small_setup(MA_GAUSS)
    with pytest.raises(ValueError):
        compute_block_stats(sample, geo, IIDCovariance(2), 5)
    with pytest.raises(ValueError):
        compute_block_stats(sample, geo, KernelCovariance(tent_kernel(2, 5)), 5)
    expo = FieldModel(2, "moving_average", "centered_exponential", tent_kernel(2))
    _, s2 = small_setup(expo)
    with pytest.raises(ValueError):
        compute_block_stats(s2, geo, expo.covariance(), 5)


def test_smoothing_draws_do_not_depend_on_the_field():
    geo, a = small_setup(MA_GAUSS, rep=3, seed=5)
    _, b = small_setup(IID, rep=3, seed=5)
    sa = compute_block_stats(a, geo, MA_GAUSS.covariance(), 5)
    sb = compute_block_stats(b, geo, IID.covariance(), 5)
    for k in sa:
        assert sa[k].w / math.sqrt(sa[k].tau2) == pytest.approx(sb[k].w / math.sqrt(sb[k].tau2), rel=1e-12)


def test_xi_is_standardized_for_moving_average():
    geo = BlockGeometry(P2, (3, 3))
    cov = MA_GAUSS.covariance()
    mom = block_moments(cov, geo, geo.blocks_within((50, 50)))
    xs = []
    for rep in range(1000):
        s = compute_block_stats(simulate_field(MA_GAUSS, (50, 50), 17, rep), geo, cov, 17, moments=mom)
        xs.append(s.column("xi"))
    var = np.var(np.array(xs), axis=0)
    assert np.all(np.abs(var - 1.0) <= 0.1), var


def test_calibrated_cdfs_track_the_xi_law():
    expo = FieldModel(2, "moving_average", "centered_exponential", tent_kernel(2))
    geo = BlockGeometry(P2, (3, 3))
    blocks = geo.blocks_within((50, 50))
    mom = block_moments(expo.covariance(), geo, blocks)
    cdfs = calibrate_block_cdfs(expo, geo, blocks, mom, 2000, 3)
    for k in blocks:
        F = cdfs[k]
        assert F.n == 2000
        # standardized: median near 0, spread near 1
        assert abs(np.median(F.sorted)) < 0.15
        assert np.std(F.sorted) == pytest.approx(1.0, abs=0.06)
    with pytest.raises(ValueError):
        calibrate_block_cdfs(expo, geo, blocks, mom, 1, 3)


# -- decomposition and coupling ---------------------------------------------------------------

@pytest.mark.parametrize("model", [IID, MA_GAUSS], ids=["iid", "ma"])
def test_decomposition_identity(model):
    geo, sample = small_setup(model)
    cov = model.covariance()
    stats = compute_block_stats(sample, geo, cov, 5)
    sigma = math.sqrt(cov.sigma2)
    for k in [(2, 2), (2, 3), (3, 2), (3, 3)]:
        t = decompose_core(stats, k, geo, sigma, sample.grid)
        assert t.identity_holds, (k, t.residual, t.tolerance)
        assert t.T1 == 0.0
        if model is IID:
            assert t.T2 == 0.0


def test_decomposition_identity_with_calibrated_cdfs(scaling_experiment):
    assert scaling_experiment.identity_failures() == []
    assert any(abs(t.T1) > 0 for r in scaling_experiment.records for t in r.terms.values())


def test_decompose_requires_all_stats():
    geo, sample = small_setup(IID)
    stats = compute_block_stats(sample, geo, IID.covariance(), 5)
    stats.pop((2, 2))
    with pytest.raises(ValueError):
        decompose_core(stats, (3, 3), geo, 1.0, sample.grid)


def test_surrogate_sheet_reproduces_eta():
    geo, sample = small_setup(MA_GAUSS)
    cov = MA_GAUSS.covariance()
    sigma = math.sqrt(cov.sigma2)
    stats = compute_block_stats(sample, geo, cov, 5)
    sheet = build_coupled_sheet(stats, geo, sigma, sample.extent, 5)
    assert sheet.variance == pytest.approx(cov.sigma2)
    for k, s in stats.items():
        B = geo.block(k).B
        assert sheet.W(B) / (sigma * math.sqrt(B.volume)) == pytest.approx(s.eta, rel=1e-10, abs=1e-10)


def test_surrogate_sheet_rejects_non_finite_eta():
    geo, sample = small_setup(IID)
    stats = compute_block_stats(sample, geo, IID.covariance(), 5)
    k = next(iter(stats))
    s = stats[k]
    stats[k] = BlockStat(s.index, s.u, s.v, s.v_pieces, s.lambda2, s.tau2, s.w, s.xi, math.inf, s.e, s.volume)
    with pytest.raises(ValueError):
        build_coupled_sheet(stats, geo, 1.0, sample.extent, 5)


def test_identity_coupling_has_zero_gap():
    geo, sample = small_setup(IID)
    stats = compute_block_stats(sample, geo, IID.covariance(), 5)
    sheet = build_coupled_sheet(stats, geo, 1.0, sample.extent, 5, mode="identity", sample=sample)
    prof = coupling_error_profile(sample, sheet, geo, 0.8, 0.05, scales=[(2, 2), (3, 3)])
    assert np.all(prof.gap == 0.0)
    assert np.array_equal(sheet.grid.cumulative, sample.grid.cumulative)
    for k, rem in prof.remainders.items():
        assert rem["D"] == rem["D_hat"] and rem["M"] == rem["M_hat"]


def test_identity_coupling_only_for_iid_gaussian():
    geo, sample = small_setup(MA_GAUSS)
    stats = compute_block_stats(sample, geo, MA_GAUSS.covariance(), 5)
    with pytest.raises(ValueError):
        build_coupled_sheet(stats, geo, 4.0, sample.extent, 5, mode="identity", sample=sample)
    with pytest.raises(ValueError):
        build_coupled_sheet(stats, geo, 4.0, sample.extent, 5, mode="other")


def test_eta_correlations_small_and_mirrored_by_sheet():
    geo = BlockGeometry(P2, (3, 3))
    cov = MA_GAUSS.covariance()
    sigma = math.sqrt(cov.sigma2)
    blocks = geo.blocks_within((50, 50))
    mom = block_moments(cov, geo, blocks)
    etas, ws = [], []
    for rep in range(1000):
        sample = simulate_field(MA_GAUSS, (50, 50), 23, rep)
        stats = compute_block_stats(sample, geo, cov, 23, moments=mom)
        sheet = build_coupled_sheet(stats, geo, sigma, (50, 50), 23, rep)
        etas.append(stats.column("eta"))
        ws.append([sheet.W(geo.block(k).B) / (sigma * math.sqrt(geo.block(k).B.volume)) for k in blocks])
    r_eta, se = correlation_with_errors(np.array(etas))
    r_w, _ = correlation_with_errors(np.array(ws))
    off = ~np.eye(len(blocks), dtype=bool)
    assert np.all(np.abs(r_w - r_eta)[off] <= 3 * se[off])
    # H-blocks are further apart than the kernel reach, so the eta's are nearly independent
    assert np.mean(np.abs(r_eta[off]) <= 3 / math.sqrt(1000)) >= 0.9


# -- profile and remainder maxima -------------------------------------------------------------

def test_probe_points_inside_wedge():
    geo = BlockGeometry(P2, (5, 5))
    pts = probe_points(geo, (532, 532), 0.8)
    assert np.all(g_tau_mask(pts, 0.8))
    assert (280, 280) in {tuple(p) for p in pts}
    vol = np.prod(pts.astype(float), axis=1)
    assert np.all(np.diff(vol) >= 0)


def test_profile_rejects_bad_input():
    geo, sample = small_setup(IID)
    stats = compute_block_stats(sample, geo, IID.covariance(), 5)
    sheet = build_coupled_sheet(stats, geo, 1.0, sample.extent, 5)
    with pytest.raises(ValueError):
        coupling_error_profile(sample, sheet, geo, 0.8, 0.5)
    with pytest.raises(ValueError):
        coupling_error_profile(sample, sheet, geo, 0.8, 0.05, probes=np.zeros((0, 2), dtype=np.int64))
    with pytest.raises(ValueError):
        coupling_error_profile(sample, sheet, geo, 0.8, 0.05, probes=np.array([[100, 2]]))


def test_remainder_maxima_against_brute_force():
    geo, sample = small_setup(MA_GAUSS)
    k = (2, 2)
    rem = geo.remainder(k)
    got = remainder_maxima(sample.grid, geo, k)
    cum = sample.grid.cumulative
    for strip, D in zip(rem.strips, got["D"]):
        expect = max(abs(cum[n]) for n in itertools.product(*(range(h + 1) for h in strip.hi)))
        assert D == pytest.approx(expect, rel=1e-12)
    for J, M in got["M"].items():
        ranges = [range(rem.low[s] + 1, rem.high[s] + 1) if s in J else [rem.low[s]] for s in range(2)]
        expect = max(abs(sample.grid.rect_sum(rem.corner_rect(J, N))) for N in itertools.product(*ranges))
        assert M == pytest.approx(expect, rel=1e-9, abs=1e-9)


def test_remainder_maxima_need_next_boundary_in_grid():
    geo, sample = small_setup(IID, extent=(100, 100))
    with pytest.raises(ValueError):
        remainder_maxima(sample.grid, geo, (3, 3))


def test_one_dimensional_profile_reduces_to_block_corners():
    p1 = Parameters(d=1, alpha=3, beta=2, tau=0.8)
    model = FieldModel(1, "moving_average", "gaussian", tent_kernel(1))
    exp = run_coupling_experiment(model, p1, (532,), [(3,), (4,)], 3, 9)
    geo = BlockGeometry(p1, (5,))
    for r in exp.records:
        for k in [(3,), (4,)]:
            assert geo.core(k).R.lo == (0,)
            assert r.profile.remainders[k]["D"] == [0.0]
            assert r.scale_stats[k]["max_s D_s"] == 0.0
        assert exp.identity_failures() == []


# -- the scaling experiment -------------------------------------------------------------------

def test_experiment_shapes(scaling_experiment):
    exp = scaling_experiment
    assert len(exp.records) == 50
    for name in SCALE_STATS:
        m = exp.stat_matrix(name)
        assert m.shape == (50, 3) and np.all(np.isfinite(m)) and np.all(m >= 0)
    assert exp.e2_matrix().shape == (50, 3)
    halves = exp.profile_halves(1e3, 2.5e5)
    assert halves.shape == (50, 2) and np.all(halves > 0)
    blocks, etas = exp.eta_matrix()
    assert etas.shape == (50, len(blocks))


def test_experiment_replicates_are_order_independent(ma_exponential):
    a = run_coupling_experiment(ma_exponential, P2, (130, 130), [(2, 2), (3, 3)], 3, 77, calibration_replicates=50)
    last = a.records[2]
    rerun = run_coupling_experiment(ma_exponential, P2, (130, 130), [(2, 2), (3, 3)], 3, 77,
                                    calibration_replicates=50)
    assert last.scale_stats == rerun.records[2].scale_stats
    assert np.array_equal(last.profile.W, rerun.records[2].profile.W)


def test_experiment_rejects_dimension_mismatch(ma_exponential):
    with pytest.raises(ValueError):
        run_coupling_experiment(ma_exponential, P2, (130,), [(2, 2)], 1, 1)
    with pytest.raises(ValueError):
        run_coupling_experiment(ma_exponential, P2, (1, 1), [(1, 1)], 1, 1)


def test_transform_error_shrinks_with_block_size(ma_exponential):
    # needs a fine calibration: with 2000 calibration replicates the empirical-CDF noise
    # (about 0.02 in eta) swamps the skewness correction at these block sizes
    exp = run_coupling_experiment(ma_exponential, P2, (532, 532), [(3, 3), (4, 4), (5, 5)], 200, 20240101,
                                  calibration_replicates=20000)
    K = 0.5 * math.sqrt(2 * 1 * P2.beta / (2 + 1))
    med = e_window_shrinkage(exp, K)
    vals = [med[k] for k in exp.scales]
    assert vals[0] >= vals[1] >= vals[2], vals
    e2 = np.median(exp.e2_matrix(), axis=0)
    assert e2[0] >= e2[1] >= e2[2], e2


def test_smoothing_sum_tracks_its_exact_mean(scaling_experiment):
    # w_i ~ N(0, tau_i^2) exactly, so E sum|w_i| = sqrt(2/pi) sum tau_i with no simulation; the
    # ratio to [N_k]^(1/2) grows like k^((beta - alpha + d)/2), which is k^(1/2) for these exponents
    exp = scaling_experiment
    geo = BlockGeometry(exp.params, (6, 6))
    med = np.median(exp.stat_matrix("sum|w_i|"), axis=0)
    cov = exp.field_model.covariance()
    for j, k in enumerate(exp.scales):
        L = geo.core(k).L_k
        mom = block_moments(cov, geo, L)
        mean = sum(math.sqrt(2 / math.pi * mom[i][1]) for i in L) / math.sqrt(math.prod(geo.corner(k)))
        assert med[j] == pytest.approx(mean, rel=0.15)
