"""Penalized fits, constraint builders and marginal compatibility."""

import numpy as np
import pytest

from volspline import bspline as bs, opt, priors as pr, regression as rg


def make_cfg(n_knots=8, order=2, span=2.0, p=2):
    basis = bs.make_basis(np.linspace(-span, span, n_knots), order, truncation=1)
    return rg.RegressionConfig(basis, penalty_order=p)


class TestTikhonovFactor:
    def test_formula(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(1600)
        x = x / np.std(x)  # unit sample deviation
        s = rg.Sample(x, np.zeros_like(x))
        cfg = make_cfg()
        assert rg.tikhonov_factor(s, cfg) == pytest.approx(1.0 / 1600)

    def test_scale_and_size(self):
        cfg = make_cfg(p=2)
        x = np.repeat([-2.0, 2.0], 50)  # sigma exactly 2
        s = rg.Sample(x, np.zeros_like(x))
        assert rg.tikhonov_factor(s, cfg) == pytest.approx(8.0 / 100)
        # doubling N halves the factor exactly
        s2 = rg.Sample(np.tile(x, 2), np.zeros(200))
        assert rg.tikhonov_factor(s2, cfg) == pytest.approx(4.0 / 100)

    def test_truncation_guard(self):
        basis = bs.make_basis(np.linspace(-2, 2, 8), 3, truncation=2)
        with pytest.raises(bs.SplineError):
            rg.RegressionConfig(basis, penalty_order=2)


class TestFitPenalized:
    def test_reproduces_affine_data(self):
        rng = np.random.default_rng(1)
        cfg = make_cfg()
        x = rng.uniform(-2.5, 2.5, 200)
        y = 2 * x + 1
        sp = rg.fit_penalized(rg.Sample(x, y), cfg, lam=0.0)
        assert np.abs(sp(x) - y).max() <= 1e-10

    def test_large_penalty_tends_to_ols_line(self):
        rng = np.random.default_rng(2)
        cfg = make_cfg()
        x = rng.uniform(-2.5, 2.5, 300)
        y = 2 * x + 1 + rng.standard_normal(300)
        sp = rg.fit_penalized(rg.Sample(x, y), cfg, lam=1e7)
        A = np.vstack([np.ones_like(x), x]).T
        beta = np.linalg.lstsq(A, y, rcond=None)[0]
        assert np.abs(sp(x) - (beta[0] + beta[1] * x)).max() <= 1e-4

    def test_rank_deficient_falls_back_to_smoothest(self):
        # two points, many basis functions: interpolate and stay affine
        cfg = make_cfg()
        sp = rg.fit_penalized(rg.Sample([0.0, 1.0], [1.0, 2.0]), cfg, lam=0.0)
        assert sp(0.0) == pytest.approx(1.0, abs=1e-9)
        assert sp(1.0) == pytest.approx(2.0, abs=1e-9)
        xs = np.linspace(-1, 2, 9)
        assert np.abs(sp(xs) - (1 + xs)).max() <= 1e-8

    def test_generative_model_recovery(self):
        rng = np.random.default_rng(3)
        N = 1600
        X = rng.standard_normal(N)
        Y = np.tanh(2 * X / np.std(X)) + rng.standard_normal(N) ** 2
        s = rg.Sample(X, Y)
        basis = bs.make_basis(np.linspace(-2.5 * s.sigma_x, 2.5 * s.sigma_x, 20), 2, truncation=1)
        cfg = rg.RegressionConfig(basis, penalty_order=2)
        sp = rg.fit_penalized(s, cfg)
        xs = np.linspace(-2, 2, 41)
        rmse = np.sqrt(np.mean((sp(xs) - (np.tanh(2 * xs) + 1.0)) ** 2))
        assert rmse < 0.15

    def test_objective_monotone_in_lambda(self):
        rng = np.random.default_rng(4)
        cfg = make_cfg()
        x = rng.uniform(-2.5, 2.5, 400)
        y = np.sin(2 * x) + 0.3 * rng.standard_normal(400)
        s = rg.Sample(x, y)
        R = rg.penalty_matrix(cfg)
        rss_prev, pen_prev = -np.inf, np.inf
        for lam in (1e-6, 1e-4, 1e-2, 1.0, 1e2):
            w = rg.fit_penalized(s, cfg, lam=lam).weights
            rss = np.mean((y - bs.Spline(cfg.basis, w)(x)) ** 2)
            pen = w @ R @ w
            assert rss >= rss_prev - 1e-12
            assert pen <= pen_prev + 1e-12
            rss_prev, pen_prev = rss, pen

    def test_rescaling_invariance(self):
        rng = np.random.default_rng(5)
        x = rng.uniform(-2, 2, 300)
        y = np.cos(x) + 0.1 * rng.standard_normal(300)
        knots = np.linspace(-2, 2, 9)
        a, b = 3.0, 1.5
        cfg1 = rg.RegressionConfig(bs.make_basis(knots, 2, truncation=1), penalty_order=2)
        cfg2 = rg.RegressionConfig(bs.make_basis(a * knots + b, 2, truncation=1), penalty_order=2)
        s1 = rg.Sample(x, y)
        s2 = rg.Sample(a * x + b, y)
        f1 = rg.fit_penalized(s1, cfg1, rg.tikhonov_factor(s1, cfg1))
        f2 = rg.fit_penalized(s2, cfg2, rg.tikhonov_factor(s2, cfg2))
        xs = np.linspace(-2, 2, 33)
        assert np.abs(f1(xs) - f2(a * xs + b)).max() <= 1e-8


class TestShapeConstraints:
    def test_nonnegative_rows(self):
        cfg = make_cfg()
        cs = rg.shape_constraints(cfg.basis, "nonnegative")
        d = cfg.basis.dimension
        assert cs.ineq_rows.shape == (d, d)
        np.testing.assert_array_equal(cs.ineq_rows, np.eye(d))

    def test_convexity_rows_are_second_derivative_loadings(self):
        basis = bs.make_basis(np.linspace(-2, 2, 8), 2, truncation=1)
        cs = rg.shape_constraints(basis, "convex")
        dm = bs.derivative_decomposition(basis, 2)
        np.testing.assert_allclose(cs.ineq_rows, dm.matrix)

    def test_integral_row_order0(self):
        basis = bs.make_basis([0.0, 1.0], 0)
        cs = rg.shape_constraints(
            basis, {"kind": "integral_eq", "measure": rg.LebesgueMeasure(0.0, 1.0), "value": 1.0}
        )
        np.testing.assert_allclose(cs.eq_rows, [[0.0, 1.0, 0.0]])
        np.testing.assert_allclose(cs.eq_rhs, [1.0])

    def test_monotone_fit_is_monotone(self):
        rng = np.random.default_rng(6)
        cfg = make_cfg()
        x = rng.uniform(-2, 2, 300)
        y = np.tanh(x) + 0.3 * rng.standard_normal(300)
        cs = rg.shape_constraints(cfg.basis, "nondecreasing")
        sp = rg.fit_constrained(rg.Sample(x, y), cfg, constraints=cs)
        xs = np.linspace(-4, 4, 200)
        assert np.all(np.diff(sp(xs)) >= -1e-9)

    def test_value_constraint(self):
        rng = np.random.default_rng(7)
        cfg = make_cfg()
        x = rng.uniform(-2, 2, 200)
        y = x**2
        cs = rg.shape_constraints(cfg.basis, {"kind": "value_eq", "x": 0.0, "value": 1.0})
        sp = rg.fit_constrained(rg.Sample(x, y), cfg, constraints=cs)
        assert sp(0.0) == pytest.approx(1.0, abs=1e-7)

    def test_rejects_unknown_and_deep_derivatives(self):
        cfg = make_cfg()
        with pytest.raises(bs.SplineError):
            rg.shape_constraints(cfg.basis, "wiggly")
        with pytest.raises(bs.SplineError):
            rg.shape_constraints(cfg.basis, {"kind": "value_eq", "x": 0.0, "value": 0.0, "deriv": 9})


class TestCompatibility:
    def test_rows_and_shapes(self):
        basis = bs.make_basis(np.linspace(-2, 2, 8), 2, truncation=1)
        prior = pr.BachelierPrior(0.0, 1.0)
        cs = rg.compatibility_constraints(basis, prior, (1.0, 3.0, (0.0, 1.0)))
        d = basis.dimension
        assert cs.eq_rows.shape == (1, d)
        assert cs.ineq_rows.shape == (2 * d, d)  # both hull sides
        assert len(cs.socs) == 1

    def test_hull_bounds_only_finite_sides(self):
        basis = bs.make_basis(np.linspace(-2, 2, 8), 2, truncation=1)
        prior = pr.BachelierPrior(0.0, 1.0)
        cs = rg.compatibility_constraints(basis, prior, (1.0, None, (0.0, np.inf)))
        assert cs.ineq_rows.shape[0] == basis.dimension
        with pytest.raises(ValueError):
            rg.compatibility_constraints(basis, prior, (1.0, None, (1.0, 0.0)))

    def test_constant_fit_forced_to_mean(self):
        # with only the mean-compatibility row, fitting constant data c != ey
        # must return the spline integrating to ey
        rng = np.random.default_rng(8)
        basis = bs.make_basis(np.linspace(-2, 2, 8), 2, truncation=1)
        cfg = rg.RegressionConfig(basis, penalty_order=2)
        prior = pr.BachelierPrior(0.0, 1.0)
        x = rng.standard_normal(500)
        y = np.full(500, 2.0)
        ey = 1.5
        cs = rg.compatibility_constraints(basis, prior, (ey, None, None))
        sp = rg.fit_constrained(rg.Sample(x, y), cfg, constraints=cs)
        row = bs.moment_rows(basis.compiled(), prior)
        assert row @ sp.weights == pytest.approx(ey, abs=1e-8)

    def test_jensen_cone_inactive_for_constant(self):
        # E[f(X)^2] <= EY2 holds strictly when f is the constant mean
        basis = bs.make_basis(np.linspace(-2, 2, 8), 2, truncation=1)
        prior = pr.BachelierPrior(0.0, 1.0)
        ey, ey2 = 1.0, 2.0
        cs = rg.compatibility_constraints(basis, prior, (ey, ey2, None))
        A, b, c, d = cs.socs[0]
        w = np.ones(basis.dimension) * ey
        gap = (c @ w + d) - np.linalg.norm(A @ w + b)
        assert gap > 0.1  # variance slack

    def test_infeasible_reports_family(self):
        rng = np.random.default_rng(9)
        basis = bs.make_basis(np.linspace(-2, 2, 8), 2, truncation=1)
        cfg = rg.RegressionConfig(basis, penalty_order=2)
        cs = rg.ConstraintSet(basis.dimension)
        row = np.zeros(basis.dimension)
        row[0] = 1.0
        cs.add_ineq(row, 1.0, "floor")
        cs.add_ineq(-row, -0.5, "cap")  # w0 >= 1 and w0 <= 0.5
        x = rng.standard_normal(100)
        with pytest.raises(opt.InfeasibleError):
            rg.fit_constrained(rg.Sample(x, x), cfg, constraints=cs)


class TestConstrainedMatchesUnconstrained:
    def test_empty_constraints_match_normal_equations(self):
        rng = np.random.default_rng(10)
        cfg = make_cfg()
        x = rng.uniform(-2.5, 2.5, 400)
        y = np.sin(x) + 0.2 * rng.standard_normal(400)
        s = rg.Sample(x, y)
        lam = rg.tikhonov_factor(s, cfg)
        w_free = rg.fit_penalized(s, cfg, lam).weights
        w_cone = rg.fit_constrained(s, cfg, lam, rg.ConstraintSet(cfg.basis.dimension)).weights
        assert np.abs(w_free - w_cone).max() <= 1e-6 * max(1.0, np.abs(w_free).max())

    def test_nonnegative_data_constraint_inactive(self):
        # data sampled from a spline with comfortably positive loadings:
        # the unconstrained optimum already satisfies the cone
        rng = np.random.default_rng(11)
        cfg = make_cfg()
        w_true = rng.uniform(0.5, 2.0, cfg.basis.dimension)
        x = rng.uniform(-2, 2, 400)
        y = bs.Spline(cfg.basis, w_true)(x) + 1e-3 * rng.standard_normal(400)
        s = rg.Sample(x, y)
        cs = rg.shape_constraints(cfg.basis, "nonnegative")
        lam = 1e-8
        w1 = rg.fit_penalized(s, cfg, lam).weights
        w2 = rg.fit_constrained(s, cfg, lam, cs).weights
        assert w1.min() > 0.1
        assert np.abs(w1 - w2).max() <= 1e-5
