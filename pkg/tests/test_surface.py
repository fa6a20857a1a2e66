"""Linear pricing forms, slice calibration and the joint surface program."""

import numpy as np
import pytest

from volspline import opt, priors as pr, surface as sf
from volspline.black import black_call
from volspline.priors import ssvi_total_variance


def prior_quotes(prior: pr.LogNormalPrior, T, strikes, spread=1e-6):
    w = prior.total_variance * T
    quotes = [
        sf.Quote(k, black_call(prior.forward, k, w) - spread / 2, black_call(prior.forward, k, w) + spread / 2)
        for k in strikes
    ]
    return sf.MarketSlice(T, prior.forward, quotes)


def ssvi_market(params, mats_and_strikes, spread):
    out = []
    F = params.forward(1.0)
    for T, strikes in mats_and_strikes:
        qs = []
        for K in strikes:
            w = ssvi_total_variance(params, T, np.log(K / F))
            mid = black_call(F, K, w)
            qs.append(sf.Quote(K, mid - spread / 2, mid + spread / 2))
        out.append(sf.MarketSlice(T, F, qs))
    return out


@pytest.fixture
def lognormal_prior():
    return pr.LogNormalPrior(100.0, 0.04)


class TestPricingForms:
    def test_identity_reweighting_reprices_prior(self, lognormal_prior):
        measure = sf.slice_measure(lognormal_prior, 1.0)
        basis = sf.make_basis(np.linspace(-0.6, 0.6, 11), 3, truncation=0)
        strikes = np.array([70.0, 90.0, 100.0, 115.0, 140.0])
        forms = sf.pricing_linear_forms(basis, measure, strikes)
        ones = np.ones(basis.dimension)
        np.testing.assert_allclose(
            forms["call_rows"] @ ones, black_call(100.0, strikes, 0.04), atol=1e-10
        )
        assert forms["mass_row"] @ ones == pytest.approx(1.0, abs=1e-12)
        assert forms["forward_row"] @ ones == pytest.approx(100.0, rel=1e-12)

    def test_deep_itm_linearization(self, lognormal_prior):
        measure = sf.slice_measure(lognormal_prior, 1.0)
        basis = sf.make_basis(np.linspace(-0.6, 0.6, 11), 3, truncation=0)
        K = 1e-6
        forms = sf.pricing_linear_forms(basis, measure, [K])
        ones = np.ones(basis.dimension)
        call = forms["call_rows"][0] @ ones
        expected = forms["forward_row"] @ ones - K * (forms["mass_row"] @ ones)
        assert call == pytest.approx(expected, rel=1e-12)

    def test_zero_strike_equals_forward(self, lognormal_prior):
        measure = sf.slice_measure(lognormal_prior, 1.0)
        basis = sf.make_basis(np.linspace(-0.6, 0.6, 11), 3, truncation=0)
        forms = sf.pricing_linear_forms(basis, measure, [0.0])
        ones = np.ones(basis.dimension)
        assert forms["call_rows"][0] @ ones == pytest.approx(100.0, rel=1e-12)

    def test_put_call_parity_rowwise(self, lognormal_prior):
        rng = np.random.default_rng(0)
        measure = sf.slice_measure(lognormal_prior, 1.0)
        basis = sf.make_basis(np.linspace(-0.6, 0.6, 11), 3, truncation=0)
        strikes = rng.uniform(60.0, 150.0, 12)
        forms = sf.pricing_linear_forms(basis, measure, strikes)
        w = rng.uniform(0.0, 2.0, basis.dimension)
        lhs = (forms["call_rows"] - forms["put_rows"]) @ w
        rhs = forms["forward_row"] @ w - strikes * (forms["mass_row"] @ w)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10 * 100.0)

    def test_repricing_matches_numerical_integration(self, lognormal_prior):
        rng = np.random.default_rng(1)
        measure = sf.slice_measure(lognormal_prior, 1.0)
        basis = sf.make_basis(np.linspace(-0.6, 0.6, 9), 3, truncation=0)
        w = rng.uniform(0.2, 2.0, basis.dimension)
        K = 105.0
        forms = sf.pricing_linear_forms(basis, measure, [K])
        from scipy.integrate import quad
        from volspline.bspline import Spline

        spline = Spline(basis, w)

        def integrand(x):
            return (x - K) * spline(np.log(x / 100.0), method="compiled") * lognormal_prior.density(x)

        breakpoints = [100.0 * np.exp(v) for v in basis.knots.knots if v > np.log(K / 100.0)]
        ref = quad(integrand, K, 2000.0, epsabs=1e-12, limit=400, points=breakpoints)[0]
        assert forms["call_rows"][0] @ w == pytest.approx(ref, abs=1e-8)


class TestSliceCalibration:
    def test_prior_recovery(self, lognormal_prior):
        ms = prior_quotes(lognormal_prior, 1.0, [80.0, 90.0, 100.0, 110.0, 125.0])
        sl = sf.calibrate_slice(ms, lognormal_prior, sf.SurfaceConfig(n_knots=11))
        assert np.abs(sl.weights - 1.0).max() <= 1e-6
        assert sl.mass() == pytest.approx(1.0, abs=1e-8)
        assert sl.mean() == pytest.approx(100.0, rel=1e-8)

    def test_lsq_mode_fits_mids(self, lognormal_prior):
        params = pr.SSVIParams(C=0.0, K=0.04, rho=-0.3, eta=0.8, gamma=0.45, forward_curve=100.0)
        (ms,) = ssvi_market(params, [(1.0, [80.0, 90.0, 100.0, 110.0, 125.0])], spread=0.0)
        sl = sf.calibrate_slice(ms, lognormal_prior, sf.SurfaceConfig(n_knots=13, curvature_weight=1e-9), mode="lsq")
        prices = sl.call_price([q.strike for q in ms.quotes])
        mids = np.array([q.mid for q in ms.quotes])
        assert np.abs(prices - mids).max() <= 1e-3
        # a lighter curvature weight fits strictly better
        loose = sf.calibrate_slice(ms, lognormal_prior, sf.SurfaceConfig(n_knots=13, curvature_weight=1e-6), mode="lsq")
        loose_fit = np.abs(loose.call_price([q.strike for q in ms.quotes]) - mids).max()
        assert np.abs(prices - mids).max() <= loose_fit + 1e-12

    def test_bracket_mode_within_bid_ask(self, lognormal_prior):
        params = pr.SSVIParams(C=0.0, K=0.04, rho=-0.3, eta=0.8, gamma=0.45, forward_curve=100.0)
        (ms,) = ssvi_market(params, [(1.0, [75.0, 90.0, 100.0, 112.0, 130.0])], spread=0.1)
        sl = sf.calibrate_slice(ms, lognormal_prior, sf.SurfaceConfig(n_knots=13))
        prices = sl.call_price([q.strike for q in ms.quotes])
        for q, p in zip(ms.quotes, prices):
            assert q.bid - 1e-7 <= p <= q.ask + 1e-7
        assert min(sl.weights) >= -1e-9

    def test_infeasible_brackets_reported(self, lognormal_prior):
        # quotes violating convexity cannot be matched by any density
        qs = [sf.Quote(90.0, 12.0, 12.01), sf.Quote(100.0, 2.0, 2.01), sf.Quote(110.0, 1.5, 1.6)]
        ms = sf.MarketSlice(1.0, 100.0, qs)
        with pytest.raises(opt.InfeasibleError):
            sf.calibrate_slice(ms, lognormal_prior, sf.SurfaceConfig(n_knots=11))


class TestCalendar:
    def test_row_count(self, lognormal_prior):
        mats = [0.5, 1.0]
        bases = [sf.make_basis(np.linspace(-0.5, 0.5, 9), 3, truncation=0) for _ in mats]
        measures = [
            sf.GaussianCoordMeasure(pr.BachelierPrior(-0.02 * t, 0.04 * t), 100.0, "exp") for t in mats
        ]
        rel = np.exp(np.linspace(-0.4, 0.4, 21))
        cs = sf.calendar_constraints(bases, measures, [100.0, 100.0], rel)
        assert cs.ineq_rows.shape[0] == 2 * 21 + 4  # one maturity pair

    def test_identical_slices_satisfy_rows(self, lognormal_prior):
        mats = [0.5, 1.0]
        bases = [sf.make_basis(np.linspace(-0.5, 0.5, 9), 3, truncation=0) for _ in mats]
        measures = [
            sf.GaussianCoordMeasure(pr.BachelierPrior(-0.02 * t, 0.04 * t), 100.0, "exp") for t in mats
        ]
        rel = np.exp(np.linspace(-0.4, 0.4, 21))
        cs = sf.calendar_constraints(bases, measures, [100.0, 100.0], rel)
        w = np.ones(sum(b.dimension for b in bases))
        viol = cs.violations(w)
        assert all(v <= 1e-10 for v in viol.values())

    def test_decreasing_variance_infeasible(self):
        # total variance shrinking with maturity has calendar arbitrage
        ln1 = pr.LogNormalPrior(100.0, 0.09)
        slices = []
        for T, wv in ((0.5, 0.06), (1.0, 0.03)):
            Ks = [85.0, 100.0, 115.0]
            qs = [sf.Quote(k, black_call(100.0, k, wv) - 1e-4, black_call(100.0, k, wv) + 1e-4) for k in Ks]
            slices.append(sf.MarketSlice(T, 100.0, qs))
        with pytest.raises(opt.InfeasibleError):
            sf.calibrate_surface(slices, ln1, sf.SurfaceConfig(n_knots=9))


class TestJointSurface:
    def test_single_slice_matches_dedicated_path(self, lognormal_prior):
        ms = prior_quotes(lognormal_prior, 1.0, [85.0, 100.0, 115.0], spread=0.01)
        one = sf.calibrate_slice(ms, lognormal_prior, sf.SurfaceConfig(n_knots=9))
        joint = sf.calibrate_surface([ms], lognormal_prior, sf.SurfaceConfig(n_knots=9))
        np.testing.assert_allclose(one.weights, joint.slices[0].weights, atol=1e-8)

    def test_sparse_quotes_with_empty_maturity(self, lognormal_prior):
        params = pr.SSVIParams(C=0.0, K=0.04, rho=-0.3, eta=0.8, gamma=0.45, forward_curve=100.0)
        market = ssvi_market(
            params,
            [(0.25, [85.0, 95.0, 100.0, 105.0, 115.0]), (0.5, [80.0, 95.0, 100.0, 110.0, 120.0]),
             (1.0, [70.0, 90.0, 100.0, 115.0, 135.0])],
            spread=0.1,
        )
        market.insert(2, sf.MarketSlice(0.75, 100.0))
        calib = sf.calibrate_surface(market, lognormal_prior, sf.SurfaceConfig(n_knots=13, time_smoothness_weight=1e-3))
        for sl, msl in zip(calib.slices, market):
            assert abs(sl.mass() - 1.0) <= 1e-8
            assert abs(sl.mean() - msl.forward) / msl.forward <= 1e-8
            prices = sl.call_price([q.strike for q in msl.quotes]) if msl.quotes else []
            for q, p in zip(msl.quotes, prices):
                assert q.bid - 1e-7 <= p <= q.ask + 1e-7
        report = sf.validate(calib)
        assert report.passed, str(report)

    def test_ssvi_prior_roundtrip(self):
        market_params = pr.SSVIParams(C=0.001, K=0.042, rho=-0.5, eta=1.2, gamma=0.4, forward_curve=100.0)
        prior_params = pr.SSVIParams(C=0.0, K=0.045, rho=-0.45, eta=1.1, gamma=0.4, forward_curve=100.0)
        market = ssvi_market(
            market_params, [(0.5, [80.0, 95.0, 100.0, 110.0, 120.0]), (1.0, [70.0, 90.0, 100.0, 115.0, 135.0])],
            spread=0.08,
        )
        calib = sf.calibrate_surface(market, prior_params, sf.SurfaceConfig(n_knots=11, time_smoothness_weight=0.0))
        report = sf.validate(calib)
        assert report.passed, str(report)

    def test_bachelier_prior_price_space(self):
        prior = pr.BachelierPrior(100.0, 15.0**2)  # variance rate in price^2/yr
        Ks = [85.0, 95.0, 100.0, 105.0, 115.0]
        slices = []
        for T in (0.5, 1.0):
            law = pr.BachelierPrior(100.0, 15.0**2 * T)
            qs = []
            for K in Ks:
                mid = law.shifted_partial_moment(K, np.inf, 1, K)
                qs.append(sf.Quote(K, mid - 0.05, mid + 0.05))
            slices.append(sf.MarketSlice(T, 100.0, qs))
        calib = sf.calibrate_surface(slices, prior, sf.SurfaceConfig(n_knots=11))
        for sl in calib.slices:
            assert abs(sl.mass() - 1.0) <= 1e-8
            assert np.abs(sl.weights - 1.0).max() <= 1e-5  # the prior reprices itself


class TestValidation:
    def test_prior_surface_passes(self, lognormal_prior):
        mkt = [prior_quotes(lognormal_prior, T, [80.0, 90.0, 100.0, 110.0, 125.0]) for T in (0.5, 1.0)]
        calib = sf.calibrate_surface(mkt, lognormal_prior, sf.SurfaceConfig(n_knots=11))
        report = sf.validate(calib)
        assert report.passed, str(report)

    def test_violating_weights_flagged(self, lognormal_prior):
        ms = prior_quotes(lognormal_prior, 1.0, [90.0, 100.0, 110.0])
        sl = sf.calibrate_slice(ms, lognormal_prior, sf.SurfaceConfig(n_knots=9))
        # corrupt the weights: a negative loading breaks convexity/density
        bad = sl.weights.copy()
        bad[4] = -1.0
        broken = sf.RNSlice(sl.basis, bad, sl.maturity, sl.forward, sl.measure)
        calib = sf.SurfaceCalibration((broken,), np.exp(np.linspace(-0.5, 0.5, 11)), sf.SurfaceConfig(n_knots=9))
        report = sf.validate(calib)
        assert not report.passed
        failing = {name for name, ok, _, req in report.checks if req and not ok}
        assert "density nonnegative" in failing or "call convexity in strike" in failing
