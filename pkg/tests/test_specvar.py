import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays
from scipy.stats import norm

from steincv.errors import ConfigurationError, RangeError
from steincv.specvar import (LagWindow, SpectralVarianceEstimator, autocovariances,
                             batch_spectral_variance, confidence_interval, lag_kernel,
                             normal_quantile, sample_autocovariance, spectral_variance,
                             spectral_variance_grad, toeplitz_apply, trapezoidal_window,
                             triangular_window, truncation_point)

from conftest import rel_err

series = arrays(np.float64, st.integers(5, 60), elements=st.floats(-100, 100))


def sv_oracle(h, b, window=triangular_window):
    """Direct two-sided sum over lags -(b-1)..(b-1)."""
    h = np.asarray(h, dtype=float)
    n = h.size
    c = h - h.mean()
    total = 0.0
    for s in range(-(b - 1), b):
        k = abs(s)
        total += float(window(s / b)) * np.sum(c[: n - k] * c[k:]) / n
    return total


class TestAutocovariance:
    def test_hand_values(self):
        assert sample_autocovariance([1, 2, 3], 0) == pytest.approx(2 / 3, abs=1e-15)
        assert sample_autocovariance([1, 2, 3], 1) == 0.0

    def test_constant(self):
        assert sample_autocovariance(np.full(9, 4.2), 3) == 0.0

    def test_lag_out_of_range(self):
        with pytest.raises(RangeError):
            sample_autocovariance([1.0, 2.0], 2)

    @given(series)
    def test_lag_zero_is_biased_variance(self, h):
        assert sample_autocovariance(h, 0) == pytest.approx(np.var(h), rel=1e-12, abs=1e-12)

    def test_vector_form_matches_scalar(self, rng):
        h = rng.standard_normal(50)
        np.testing.assert_allclose(autocovariances(h, 7), [sample_autocovariance(h, s) for s in range(7)],
                                   rtol=1e-14, atol=1e-15)


class TestWindows:
    def test_triangular_values(self):
        assert triangular_window(0.0) == 1.0
        assert triangular_window(0.5) == 0.5
        assert triangular_window(-1.0) == 0.0
        assert triangular_window(1.7) == 0.0

    def test_trapezoidal_flat_top(self):
        np.testing.assert_array_equal(trapezoidal_window([-0.5, 0.0, 0.25, 0.5]), 1.0)
        assert trapezoidal_window(0.75) == pytest.approx(0.5)
        assert trapezoidal_window(1.0) == 0.0

    @pytest.mark.parametrize("window", [LagWindow("triangular"), LagWindow("trapezoidal"),
                                        LagWindow("custom", ((0.0, 1.0), (0.3, 0.9), (1.0, 0.0)))])
    def test_window_invariants(self, window):
        s = np.linspace(-1.5, 1.5, 301)
        w = window(s)
        assert np.all((0 <= w) & (w <= 1))
        np.testing.assert_array_equal(w, window(-s))
        assert np.all(w[np.abs(s) > 1] == 0)

    def test_custom_table_validation(self):
        with pytest.raises(ConfigurationError):
            LagWindow("custom")
        with pytest.raises(ConfigurationError):
            LagWindow("custom", ((0.5, 1.0), (0.2, 0.5)))
        with pytest.raises(ConfigurationError):
            LagWindow("custom", ((0.0, 1.5), (1.0, 0.0)))
        with pytest.raises(ConfigurationError):
            LagWindow("hann")


class TestSpectralVariance:
    def test_hand_value(self):
        est = SpectralVarianceEstimator(2)
        assert abs(spectral_variance([1.0, 2.0, 3.0], est) - 2 / 3) <= 1e-15

    def test_constant_series(self):
        assert spectral_variance(np.full(40, -3.0), SpectralVarianceEstimator(10)) == 0.0

    def test_iid_normal_calibration(self, rng):
        v = spectral_variance(rng.standard_normal(100_000), SpectralVarianceEstimator(23))
        assert 0.9 <= v <= 1.1

    def test_too_short(self):
        with pytest.raises(RangeError):
            spectral_variance([1.0, 2.0], SpectralVarianceEstimator(3))

    def test_invalid_truncation(self):
        with pytest.raises(ConfigurationError):
            SpectralVarianceEstimator(0)
        with pytest.raises(ConfigurationError):
            SpectralVarianceEstimator(2.5)

    @given(series, st.integers(1, 5))
    def test_matches_two_sided_oracle(self, h, b):
        est = SpectralVarianceEstimator(b)
        assert spectral_variance(h, est) == pytest.approx(sv_oracle(h, b), rel=1e-10, abs=1e-9)

    def test_trapezoidal_oracle(self, rng):
        h = rng.standard_normal(200)
        est = SpectralVarianceEstimator(12, LagWindow("trapezoidal"))
        assert spectral_variance(h, est) == pytest.approx(sv_oracle(h, 12, trapezoidal_window), rel=1e-12)

    def test_bartlett_nonnegative(self, rng):
        for _ in range(1000):
            n = int(rng.integers(2, 200))
            b = int(rng.integers(1, n + 1))
            h = rng.standard_normal(n) * rng.uniform(0.01, 10) + rng.normal(0, 5)
            if rng.random() < 0.3:
                h = np.cumsum(h)
            assert spectral_variance(h, SpectralVarianceEstimator(b)) >= -1e-12

    @given(series, st.floats(-1e3, 1e3), st.integers(1, 5))
    def test_shift_invariance(self, h, c, b):
        est = SpectralVarianceEstimator(b)
        assert abs(spectral_variance(h + c, est) - spectral_variance(h, est)) <= 1e-10 * max(1, np.mean(h * h))

    @given(series, st.floats(0.01, 100), st.integers(1, 5))
    def test_quadratic_scaling(self, h, c, b):
        est = SpectralVarianceEstimator(b)
        v = spectral_variance(h, est)
        assert spectral_variance(c * h, est) == pytest.approx(c * c * v, rel=1e-9, abs=1e-12 * c * c * (np.mean(h * h) + 1))

    def test_batch(self, rng):
        est = SpectralVarianceEstimator(4)
        hs = [rng.standard_normal(30) for _ in range(3)]
        np.testing.assert_array_equal(batch_spectral_variance(hs, est), [spectral_variance(h, est) for h in hs])


class TestGradient:
    @pytest.mark.parametrize("n,b", [(40, 7), (10, 10), (5, 3), (64, 1)])
    def test_matches_finite_differences(self, rng, n, b):
        est = SpectralVarianceEstimator(b)
        h = rng.standard_normal(n)
        fd = np.empty(n)
        eps = 1e-6
        for k in range(n):
            e = np.zeros(n)
            e[k] = eps
            fd[k] = (spectral_variance(h + e, est) - spectral_variance(h - e, est)) / (2 * eps)
        assert rel_err(spectral_variance_grad(h, est), fd) < 1e-7

    def test_quadratic_form(self, rng):
        est = SpectralVarianceEstimator(5)
        h = rng.standard_normal(25)
        c = h - h.mean()
        assert c @ toeplitz_apply(c, est) / c.size == pytest.approx(spectral_variance(h, est), rel=1e-12)

    def test_toeplitz_against_dense_matrix(self, rng):
        est = SpectralVarianceEstimator(4)
        n = 9
        w = est.weights()
        M = np.array([[w[abs(i - j)] if abs(i - j) < 4 else 0.0 for j in range(n)] for i in range(n)])
        G = rng.standard_normal((n, 3))
        np.testing.assert_allclose(toeplitz_apply(G, est), M @ G, rtol=1e-13, atol=1e-13)
        assert lag_kernel(est).size == 7


class TestConfidenceInterval:
    def test_degenerate(self):
        assert confidence_interval(1.5, 0.0, 10) == (1.5, 1.5)

    def test_standard_case(self):
        lo, hi = confidence_interval(0.0, 1.0, 100, 0.05)
        assert lo == pytest.approx(-0.19600, abs=1e-4)
        assert hi == pytest.approx(0.19600, abs=1e-4)

    def test_width_vanishes_as_delta_to_one(self):
        lo, hi = confidence_interval(2.0, 4.0, 10, 1 - 1e-12)
        assert hi - lo < 1e-10

    def test_errors(self):
        with pytest.raises(ConfigurationError):
            confidence_interval(0.0, -1.0, 10)
        with pytest.raises(ConfigurationError):
            confidence_interval(0.0, 1.0, 10, 0.0)

    def test_quantile_against_scipy(self):
        ps = np.concatenate([np.logspace(-12, -1, 60), np.linspace(0.01, 0.99, 99),
                             1 - np.logspace(-12, -1, 60)])
        for p in ps:
            assert abs(normal_quantile(p) - norm.ppf(p)) < 1e-8 * max(1.0, abs(norm.ppf(p)))

    def test_quantile_domain(self):
        with pytest.raises(ConfigurationError):
            normal_quantile(1.0)


def test_truncation_point():
    n, rho = 30_000, 0.5
    assert truncation_point(n, rho) == math.ceil(2 * math.log(n) / math.log(2))
    with pytest.raises(ConfigurationError):
        truncation_point(100, 1.0)
