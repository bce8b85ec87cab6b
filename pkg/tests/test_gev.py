"""Tests for the GEV distribution functions and single-sample estimation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from smoothgev.errors import DomainError, EstimationError
from smoothgev.gev import (
    EULER_GAMMA,
    XI_EPS,
    GevParams,
    Sample,
    cdf,
    fit_lmoments,
    fit_mle,
    gev_cdf,
    gev_loglik,
    gev_loglik_derivatives,
    gev_mean_var,
    gev_pdf,
    gev_quantile,
    gev_sample,
    logpdf,
    logpdf_terms,
    mean_var,
    quantile,
    sample_lmoments,
)

SHAPES = [-0.4, -0.1, 0.0, 0.1, 0.4]


def support(p: GevParams) -> tuple[float, float]:
    return p.lower_endpoint, p.upper_endpoint


class TestGevParams:
    """Parameter validation and support endpoints."""

    def test_rejects_nonpositive_scale(self) -> None:
        """A zero scale is a domain error."""
        with pytest.raises(DomainError, match="scale"):
            GevParams(0.0, 0.0, 0.1)

    def test_rejects_non_finite(self) -> None:
        """Non-finite parameters are rejected."""
        with pytest.raises(DomainError, match="finite"):
            GevParams(np.nan, 1.0, 0.0)

    def test_endpoints(self) -> None:
        """Bounded tails end at mu - sigma / xi."""
        assert GevParams(0.0, 1.0, -0.5).upper_endpoint == pytest.approx(2.0)
        assert GevParams(0.0, 1.0, 0.5).lower_endpoint == pytest.approx(-2.0)
        assert GevParams(0.0, 1.0, 0.0).upper_endpoint == np.inf

    def test_inference_validity(self) -> None:
        """Shapes at or below -1 are flagged."""
        assert GevParams(0.0, 1.0, -0.99).valid_for_inference
        assert not GevParams(0.0, 1.0, -1.0).valid_for_inference


class TestCdf:
    """Distribution function values and limits."""

    def test_gumbel_at_location(self) -> None:
        """G(mu) = exp(-1) in the Gumbel case."""
        assert gev_cdf(GevParams(0.0, 1.0, 0.0), 0.0) == pytest.approx(np.exp(-1.0), abs=1e-15)

    def test_upper_endpoint(self) -> None:
        """The bounded tail reaches probability one at its endpoint."""
        assert gev_cdf(GevParams(0.0, 1.0, -0.5), 2.0) == 1.0
        assert gev_cdf(GevParams(0.0, 1.0, -0.5), 5.0) == 1.0

    def test_below_lower_endpoint(self) -> None:
        """Heavy-tailed distributions have zero mass below their endpoint."""
        assert gev_cdf(GevParams(0.0, 1.0, 0.5), -3.0) == 0.0

    def test_matches_integrated_density(self) -> None:
        """G(1) equals the integral of the density from the lower endpoint."""
        p = GevParams(0.0, 1.0, 0.2)
        value, _ = integrate.quad(lambda y: gev_pdf(p, y), p.lower_endpoint, 1.0, epsabs=1e-13)
        assert gev_cdf(p, 1.0) == pytest.approx(value, abs=1e-9)

    def test_non_finite_argument(self) -> None:
        """Infinite arguments are a domain error."""
        with pytest.raises(DomainError):
            gev_cdf(GevParams(0.0, 1.0, 0.0), np.inf)

    @pytest.mark.parametrize("xi", [XI_EPS, -XI_EPS, 1e-9])
    def test_gumbel_switch_is_continuous(self, xi) -> None:
        """Shapes within XI_EPS of zero use the Gumbel form exactly."""
        y = np.linspace(-3, 6, 19)
        np.testing.assert_allclose(cdf(y, 0.0, 1.0, xi), cdf(y, 0.0, 1.0, 0.0), atol=1e-8)

    def test_just_outside_switch(self) -> None:
        """Slightly larger shapes stay close to the Gumbel limit."""
        y = np.linspace(-2, 4, 13)
        np.testing.assert_allclose(cdf(y, 0.0, 1.0, 1e-5), cdf(y, 0.0, 1.0, 0.0), atol=1e-4)


class TestDensity:
    """Density values and normalization."""

    def test_gumbel_at_location(self) -> None:
        """g(0) = exp(-1) for the standard Gumbel."""
        assert gev_pdf(GevParams(0.0, 1.0, 0.0), 0.0) == pytest.approx(np.exp(-1.0))

    def test_zero_outside_support(self) -> None:
        """The density vanishes beyond the endpoints."""
        assert gev_pdf(GevParams(0.0, 1.0, -0.5), 2.5) == 0.0
        assert gev_pdf(GevParams(0.0, 1.0, 0.5), -2.5) == 0.0

    @pytest.mark.parametrize("xi", SHAPES)
    def test_normalization(self, xi) -> None:
        """The density integrates to one over the support."""
        p = GevParams(0.0, 1.0, xi)
        lo, hi = support(p)
        total, _ = integrate.quad(lambda y: gev_pdf(p, y), lo, hi, epsabs=1e-12, limit=200)
        assert total == pytest.approx(1.0, abs=1e-7)

    def test_bounded_positive_value(self) -> None:
        """Inside a bounded support the density is finite and positive."""
        value = gev_pdf(GevParams(0.0, 1.0, -0.2), 1.0)
        assert 0.0 < value < np.inf


class TestQuantile:
    """Inverse distribution function."""

    def test_gumbel_at_exp_minus_one(self) -> None:
        """-log(-log(e^-1)) = 0."""
        assert gev_quantile(GevParams(0.0, 1.0, 0.0), np.exp(-1.0)) == pytest.approx(0.0, abs=1e-12)

    def test_unit_shape_at_exp_minus_one(self) -> None:
        """The general form also gives 0 at unit argument."""
        assert gev_quantile(GevParams(0.0, 1.0, 1.0), np.exp(-1.0)) == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("prob", [0.0, 1.0, -0.2, 1.5])
    def test_probability_outside_unit_interval(self, prob) -> None:
        """Probabilities must lie strictly between 0 and 1."""
        with pytest.raises(DomainError, match="strictly between"):
            gev_quantile(GevParams(0.0, 1.0, 0.0), prob)

    @pytest.mark.parametrize("xi", SHAPES)
    def test_round_trip(self, xi) -> None:
        """G(G^-1(u)) = u."""
        u = np.array([0.01, 0.2, 0.5, 0.8, 0.99])
        np.testing.assert_allclose(cdf(quantile(u, 1.0, 2.0, xi), 1.0, 2.0, xi), u, atol=1e-12)

    @given(
        mu=st.floats(min_value=-50, max_value=50),
        sigma=st.floats(min_value=0.1, max_value=10),
        xi=st.floats(min_value=-0.8, max_value=0.8),
        a=st.floats(min_value=-20, max_value=20),
        b=st.floats(min_value=0.1, max_value=10),
        u=st.floats(min_value=0.001, max_value=0.999),
    )
    @settings(max_examples=60, deadline=None)
    def test_location_scale_equivariance(self, mu, sigma, xi, a, b, u) -> None:
        """Quantiles transform like the data under y -> a + b y."""
        direct = quantile(u, a + b * mu, b * sigma, xi)
        mapped = a + b * quantile(u, mu, sigma, xi)
        assert float(direct) == pytest.approx(float(mapped), rel=1e-9, abs=1e-9)


class TestLoglik:
    """Sample log-likelihood."""

    def test_single_gumbel_point(self) -> None:
        """log g(0) = -1 for the standard Gumbel."""
        assert gev_loglik(GevParams(0.0, 1.0, 0.0), Sample([0.0])) == pytest.approx(-1.0)

    def test_support_violation(self) -> None:
        """A point beyond the upper endpoint gives -inf."""
        assert gev_loglik(GevParams(0.0, 1.0, -0.5), Sample([3.0])) == -np.inf

    def test_sum_of_log_densities(self) -> None:
        """The log-likelihood is the sum of log densities."""
        rng = np.random.default_rng(4)
        p = GevParams(3.0, 1.2, 0.15)
        values = gev_sample(p, 50, rng)
        expected = sum(np.log(gev_pdf(p, y)) for y in values)
        assert gev_loglik(p, Sample(values)) == pytest.approx(expected, abs=1e-10)

    def test_sample_validation(self) -> None:
        """Samples need finite values and increasing years."""
        with pytest.raises(DomainError, match="finite"):
            Sample([1.0, np.nan])
        with pytest.raises(DomainError, match="increasing"):
            Sample([1.0, 2.0], years=[2, 1])


class TestMeanVar:
    """Moments and their existence conditions."""

    def test_gumbel_moments(self) -> None:
        """Mean gamma and variance pi^2 / 6 for the standard Gumbel."""
        mean, var = gev_mean_var(GevParams(0.0, 1.0, 0.0))
        assert mean == pytest.approx(EULER_GAMMA, abs=1e-12)
        assert var == pytest.approx(np.pi**2 / 6, abs=1e-12)

    def test_infinite_variance(self) -> None:
        """The variance is infinite for xi >= 1/2."""
        mean, var = gev_mean_var(GevParams(0.0, 1.0, 0.6))
        assert np.isfinite(mean)
        assert var == np.inf

    def test_infinite_mean(self) -> None:
        """The mean is infinite for xi >= 1."""
        mean, _ = gev_mean_var(GevParams(0.0, 1.0, 1.0))
        assert mean == np.inf

    def test_continuous_through_gumbel(self) -> None:
        """Moments just off xi = 0 approach the Gumbel values."""
        mean0, var0 = mean_var(0.0, 1.0, 0.0)
        for xi in (2e-6, -2e-6, 1e-4):
            mean, var = mean_var(0.0, 1.0, xi)
            assert float(mean) == pytest.approx(float(mean0), abs=5 * abs(xi))
            assert float(var) == pytest.approx(float(var0), abs=20 * abs(xi))

    @pytest.mark.parametrize("xi", [-0.5, -0.1, 0.1])
    def test_matches_monte_carlo(self, xi) -> None:
        """Mean and variance agree with 10^6 simulated draws within 4 standard errors."""
        rng = np.random.default_rng(2024)
        p = GevParams(0.0, 1.0, xi)
        draws = gev_sample(p, 1_000_000, rng)
        mean, var = gev_mean_var(p)
        n = draws.size
        assert abs(draws.mean() - mean) < 4 * np.sqrt(var / n)
        sq = (draws - draws.mean()) ** 2
        assert abs(sq.mean() - var) < 4 * sq.std() / np.sqrt(n)


class TestLogDensityTerms:
    """Analytic derivatives of the log-density in (mu, log sigma, xi)."""

    @pytest.mark.parametrize("xi", [-0.3, -1e-3, 0.0, 1e-3, 0.25])
    def test_first_derivatives_match_finite_differences(self, xi) -> None:
        """Gradient entries equal central differences of the value."""
        y = np.array([-0.5, 0.3, 1.2, 2.0])
        mu, psi, h = 0.2, np.log(1.3), 1e-6
        t = logpdf_terms(y, mu, psi, xi)

        def val(m, s, x):
            return logpdf_terms(y, m, s, x).value

        np.testing.assert_allclose(t.d_mu, (val(mu + h, psi, xi) - val(mu - h, psi, xi)) / (2 * h), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(t.d_psi, (val(mu, psi + h, xi) - val(mu, psi - h, xi)) / (2 * h), rtol=1e-5, atol=1e-7)
        np.testing.assert_allclose(t.d_xi, (val(mu, psi, xi + h) - val(mu, psi, xi - h)) / (2 * h), rtol=1e-5, atol=1e-7)

    @pytest.mark.parametrize("xi", [-0.3, 0.0, 0.25])
    def test_second_derivatives_match_finite_differences(self, xi) -> None:
        """Hessian entries equal central differences of the gradient."""
        y = np.array([-0.5, 0.3, 1.2, 2.0])
        mu, psi, h = 0.2, np.log(1.3), 1e-6
        t = logpdf_terms(y, mu, psi, xi)
        plus, minus = logpdf_terms(y, mu, psi, xi + h), logpdf_terms(y, mu, psi, xi - h)
        np.testing.assert_allclose(t.d_xi_xi, (plus.d_xi - minus.d_xi) / (2 * h), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(t.d_mu_xi, (plus.d_mu - minus.d_mu) / (2 * h), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(t.d_psi_xi, (plus.d_psi - minus.d_psi) / (2 * h), rtol=1e-5, atol=1e-6)
        plus, minus = logpdf_terms(y, mu + h, psi, xi), logpdf_terms(y, mu - h, psi, xi)
        np.testing.assert_allclose(t.d_mu_mu, (plus.d_mu - minus.d_mu) / (2 * h), rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(t.d_mu_psi, (plus.d_psi - minus.d_psi) / (2 * h), rtol=1e-5, atol=1e-6)
        plus, minus = logpdf_terms(y, mu, psi + h, xi), logpdf_terms(y, mu, psi - h, xi)
        np.testing.assert_allclose(t.d_psi_psi, (plus.d_psi - minus.d_psi) / (2 * h), rtol=1e-5, atol=1e-6)

    def test_value_matches_logpdf(self) -> None:
        """The value column equals logpdf, including outside the support."""
        y = np.array([-1.0, 0.0, 1.5, 4.0])
        np.testing.assert_allclose(
            logpdf_terms(y, 0.0, 0.0, -0.4).value, logpdf(y, 0.0, 1.0, -0.4), atol=1e-12
        )

    def test_natural_parameter_gradient_vanishes_at_mle(self) -> None:
        """The likelihood gradient in (mu, sigma, xi) is zero at the maximum."""
        rng = np.random.default_rng(9)
        values = gev_sample(GevParams(5.0, 2.0, -0.1), 200, rng)
        fit = fit_mle(Sample(values))
        grad, hess = gev_loglik_derivatives(fit.params, Sample(values))
        assert np.max(np.abs(grad)) < 1e-5
        assert np.all(np.linalg.eigvalsh(hess) < 0)


class TestLmoments:
    """L-moment estimation."""

    def test_gumbel_recovery(self) -> None:
        """10^6 Gumbel draws give estimates within 0.01 of (0, 1, 0)."""
        rng = np.random.default_rng(0)
        values = gev_sample(GevParams(0.0, 1.0, 0.0), 1_000_000, rng)
        p = fit_lmoments(Sample(values))
        assert p.mu == pytest.approx(0.0, abs=0.01)
        assert p.sigma == pytest.approx(1.0, abs=0.01)
        assert p.xi == pytest.approx(0.0, abs=0.01)

    def test_gumbel_population_lmoments(self) -> None:
        """Sample l1 and l2 approach gamma and log 2."""
        rng = np.random.default_rng(1)
        l1, l2, _ = sample_lmoments(gev_sample(GevParams(0.0, 1.0, 0.0), 500_000, rng))
        assert l1 == pytest.approx(EULER_GAMMA, abs=0.01)
        assert l2 == pytest.approx(np.log(2.0), abs=0.01)

    def test_constant_sample(self) -> None:
        """A sample without spread cannot be fitted."""
        with pytest.raises(EstimationError, match="no spread"):
            fit_lmoments(Sample([5.0, 5.0, 5.0]))

    def test_too_short(self) -> None:
        """Fewer than three values is an estimation error."""
        with pytest.raises(EstimationError, match="at least 3"):
            fit_lmoments(np.array([1.0, 2.0]))


class TestMle:
    """Maximum likelihood for one sample."""

    def test_recovers_truth(self) -> None:
        """10^5 draws from GEV(10, 2, -0.2) give estimates within 0.05."""
        rng = np.random.default_rng(7)
        truth = GevParams(10.0, 2.0, -0.2)
        result = fit_mle(Sample(gev_sample(truth, 100_000, rng)))
        params, covariance = result
        assert params.mu == pytest.approx(10.0, abs=0.05)
        assert params.sigma == pytest.approx(2.0, abs=0.05)
        assert params.xi == pytest.approx(-0.2, abs=0.05)
        assert covariance.shape == (3, 3)
        assert np.all(np.linalg.eigvalsh(covariance) > 0)

    def test_improves_on_lmoments(self) -> None:
        """The MLE log-likelihood is at least that of the L-moment start."""
        rng = np.random.default_rng(12)
        s = Sample(gev_sample(GevParams(0.0, 1.0, 0.1), 69, rng))
        result = fit_mle(s)
        assert result.loglik >= gev_loglik(fit_lmoments(s), s) - 1e-9

    def test_sample_reproducible(self) -> None:
        """Sampling with the same seed repeats."""
        p = GevParams(1.0, 2.0, 0.1)
        a = gev_sample(p, 20, np.random.default_rng(3))
        b = gev_sample(p, 20, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)
