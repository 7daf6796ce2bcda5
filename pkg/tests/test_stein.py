import numpy as np
import pytest
from hypothesis import given, strategies as st

from steincv.errors import ConfigurationError, NumericError
from steincv.neural import init_mlp
from steincv.specvar import SpectralVarianceEstimator, spectral_variance
from steincv.stein import (PolynomialPhi, fit_polynomial_exact, monomial_exponents,
                           monte_carlo_zero_mean_check, n_monomials, optimal_phi_gaussian_linear,
                           stein_apply, stein_apply_truncated)
from steincv.targets import make_target

from conftest import central_gradient, central_laplacian, rel_err

N1 = make_target("gaussian", 1)
N2 = make_target("gaussian", 2)


def poly(dim, degree, coef):
    return PolynomialPhi(dim, degree, np.asarray(coef, dtype=float))


def random_poly(rng, dim, degree):
    return poly(dim, degree, rng.standard_normal(n_monomials(dim, degree)))


class _Sum:
    """a * phi1 + b * phi2, built from the operands only."""

    def __init__(self, a, p1, b, p2):
        self.a, self.p1, self.b, self.p2 = a, p1, b, p2

    def value(self, x):
        return self.a * self.p1.value(x) + self.b * self.p2.value(x)

    def gradient(self, x):
        return self.a * self.p1.gradient(x) + self.b * self.p2.gradient(x)

    def laplacian(self, x):
        return self.a * self.p1.laplacian(x) + self.b * self.p2.laplacian(x)


class _Blowup:
    def value(self, x):
        return 0.0

    def gradient(self, x):
        return np.full(np.shape(x), np.inf)

    def laplacian(self, x):
        return 0.0


class TestSteinApply:
    def test_linear_phi(self):
        assert stein_apply(poly(1, 1, [0, 1]), [2.0], N1) == -2.0

    def test_half_square(self):
        assert stein_apply(poly(1, 2, [0, 0, 0.5]), [1.0], N1) == 0.0

    def test_half_square_formula(self, rng):
        x = rng.standard_normal((50, 1))
        np.testing.assert_allclose(stein_apply(poly(1, 2, [0, 0, 0.5]), x, N1), 1 - x[:, 0] ** 2,
                                   rtol=0, atol=1e-14)

    def test_constant_phi(self, rng):
        x = rng.standard_normal((20, 2)) * 5
        np.testing.assert_array_equal(stein_apply(poly(2, 0, [3.7]), x, N2), 0.0)

    def test_optimal_phi(self, rng):
        phi = optimal_phi_gaussian_linear(3)
        assert stein_apply(phi, [2.0, -1.0, 0.4], make_target("gaussian", 3)) == 2.0
        x = rng.standard_normal((40, 3))
        np.testing.assert_array_equal(stein_apply(phi, x, make_target("gaussian", 3)), x[:, 0])

    def test_non_finite_reports_point(self):
        with pytest.raises(NumericError) as info:
            stein_apply(_Blowup(), np.array([[0.0, 1.0], [2.0, 3.0]]), N2)
        np.testing.assert_array_equal(info.value.point, [0.0, 1.0])

    def test_linearity(self, rng):
        x = rng.standard_normal((100, 2)) * 2
        p1 = random_poly(rng, 2, 4)
        p2 = init_mlp(2, [8], "recu", seed=3)
        a, b = 1.7, -0.35
        lhs = stein_apply(_Sum(a, p1, b, p2), x, N2)
        rhs = a * stein_apply(p1, x, N2) + b * stein_apply(p2, x, N2)
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(1.0, np.max(np.abs(rhs)))

    def test_funnel_target(self):
        # g for phi = x1 is -dU/dx1, computed independently of the library
        t = make_target("funnel", 2, {"a": 1.0, "b": 0.5})
        x = np.array([0.3, -0.8])
        assert stein_apply(poly(2, 1, [0, 1, 0]), x, t) == pytest.approx(-t.grad_potential(x)[0], abs=0)


class TestTruncated:
    @given(st.floats(0.1, 5.0))
    def test_agreement_inside_and_zero_outside(self, R):
        rng = np.random.default_rng(0)
        phi = random_poly(rng, 2, 3)
        x = rng.uniform(-2 * R, 2 * R, (300, 2))
        inside = np.all(np.abs(x) < R, axis=1)
        full = stein_apply(phi, x, N2)
        trunc = stein_apply_truncated(phi, x, N2, R)
        np.testing.assert_array_equal(trunc[inside], full[inside])
        np.testing.assert_array_equal(trunc[~inside], 0.0)

    def test_boundary_is_outside(self):
        phi = poly(1, 1, [0, 1])
        assert stein_apply_truncated(phi, [2.0], N1, 2.0) == 0.0
        assert stein_apply_truncated(phi, [0.0], N1, 1e-6) == stein_apply(phi, [0.0], N1)

    def test_large_radius_recovers_untruncated(self, rng):
        phi = random_poly(rng, 2, 4)
        x = np.stack(np.meshgrid(np.linspace(-3, 3, 21), np.linspace(-3, 3, 21)), -1).reshape(-1, 2)
        np.testing.assert_array_equal(stein_apply_truncated(phi, x, N2, 1e6), stein_apply(phi, x, N2))

    def test_radius_must_be_positive(self):
        with pytest.raises(ConfigurationError):
            stein_apply_truncated(poly(1, 1, [0, 1]), [0.0], N1, 0.0)


class TestZeroMean:
    def test_constant(self):
        assert monte_carlo_zero_mean_check(poly(2, 0, [1.0]), N2, N2.sample, 1000) == (0.0, 0.0)

    def test_zero_draws(self):
        with pytest.raises(ConfigurationError):
            monte_carlo_zero_mean_check(poly(2, 0, [1.0]), N2, N2.sample, 0)

    @pytest.mark.parametrize("phi", [poly(1, 2, [0, 0, 0.5]), optimal_phi_gaussian_linear(1)])
    def test_closed_form_phis(self, phi):
        mean, se = monte_carlo_zero_mean_check(phi, N1, N1.sample, 100_000, seed=5)
        assert abs(mean) <= 4 * se

    @pytest.mark.parametrize("seed", range(3))
    def test_random_polynomial(self, seed):
        phi = random_poly(np.random.default_rng(seed), 2, 4)
        mean, se = monte_carlo_zero_mean_check(phi, N2, N2.sample, 100_000, seed=seed)
        assert abs(mean) <= 4 * se


class TestPolynomial:
    def test_grlex_order(self):
        e = monomial_exponents(2, 2).tolist()
        assert e == [[0, 0], [1, 0], [0, 1], [2, 0], [1, 1], [0, 2]]

    @pytest.mark.parametrize("dim,degree", [(1, 0), (1, 4), (2, 3), (6, 4), (9, 2)])
    def test_coefficient_count(self, dim, degree):
        import math
        assert len(monomial_exponents(dim, degree)) == math.comb(dim + degree, degree)
        assert len(np.unique(monomial_exponents(dim, degree), axis=0)) == n_monomials(dim, degree)

    def test_degree_bounds(self):
        with pytest.raises(ConfigurationError):
            PolynomialPhi.zeros(2, 5)
        with pytest.raises(ConfigurationError):
            PolynomialPhi(2, 2, np.zeros(5))

    def test_immutable(self):
        p = PolynomialPhi.zeros(2, 1)
        with pytest.raises(ValueError):
            p.coefficients[0] = 1.0

    def test_hand_polynomial(self):
        # phi = 2 - x1 + 3 x1 x2^2 at (1, 2): value 13, grad (11, 12), lap 6 x1 = 6
        e = monomial_exponents(2, 3).tolist()
        c = np.zeros(len(e))
        c[e.index([0, 0])] = 2
        c[e.index([1, 0])] = -1
        c[e.index([1, 2])] = 3
        p = poly(2, 3, c)
        x = [1.0, 2.0]
        assert p.value(x) == 13.0
        np.testing.assert_array_equal(p.gradient(x), [11.0, 12.0])
        assert p.laplacian(x) == 6.0

    @pytest.mark.parametrize("dim", [1, 2, 6])
    def test_derivatives_vs_finite_differences(self, rng, dim):
        p = random_poly(rng, dim, 4)
        X = rng.uniform(-1.5, 1.5, (100, dim))
        g = p.gradient(X)
        lap = p.laplacian(X)
        assert rel_err(g, np.array([central_gradient(p.value, x, 1e-5) for x in X])) < 1e-7
        assert rel_err(lap, np.array([central_laplacian(p.value, x, 1e-3) for x in X])) < 1e-7

    def test_batch_matches_points(self, rng):
        p = random_poly(rng, 3, 3)
        X = rng.standard_normal((5, 3))
        np.testing.assert_allclose(p.value(X), [p.value(x) for x in X], rtol=1e-14)
        np.testing.assert_allclose(p.gradient(X), [p.gradient(x) for x in X], rtol=1e-14)


class TestExactFit:
    def test_recovers_optimal_phi_on_gaussian(self, rng):
        X = rng.standard_normal((3000, 2))
        est = SpectralVarianceEstimator(10)
        phi = fit_polynomial_exact(X, X[:, 0], N2.grad_potential(X), 2, est)
        resid = X[:, 0] - stein_apply(phi, X, N2)
        assert spectral_variance(resid, est) < 1e-20

    def test_is_minimum(self, rng):
        X = np.cumsum(rng.standard_normal((800, 2)), axis=0) * 0.05 + rng.standard_normal((800, 2))
        f = X[:, 1] ** 2
        est = SpectralVarianceEstimator(12)
        gu = N2.grad_potential(X)
        phi = fit_polynomial_exact(X, f, gu, 3, est)

        def loss(p):
            return spectral_variance(f - stein_apply(p, X, N2), est)

        best = loss(phi)
        for _ in range(20):
            c = phi.coefficients + 1e-3 * rng.standard_normal(phi.coefficients.size)
            assert loss(poly(2, 3, c)) >= best * (1 - 1e-9)
