"""Tests for the population-size and unit-size priors."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from sspsize.exceptions import ElicitationError, ValidationError
from sspsize.priors import (
    EtaPrior,
    SizePrior,
    TabulatedSizePrior,
    beta_from_elicitation,
    log_prior_eta,
    log_prior_N,
)

# ------------------------------------------------------------------ #
# log_prior_N
# ------------------------------------------------------------------ #


class TestLogPriorN:
    def test_beta_one_one_ratio_is_four(self):
        n = 500
        p = SizePrior.beta_proportion(n, 1.0, 1.0)
        assert math.exp(log_prior_N(p, 2 * n) - log_prior_N(p, 4 * n)) == pytest.approx(4.0, rel=1e-13)

    def test_fjj_jeffreys_is_one_over_n(self):
        p = SizePrior.factorial(100, l=1)
        for N in (150, 400, 999):
            # lgamma differences at this magnitude carry ~1e-11 rounding
            assert log_prior_N(p, N) - log_prior_N(p, 2 * N) == pytest.approx(math.log(2), abs=1e-9)

    def test_fjj_general_l(self):
        p = SizePrior.factorial(50, l=3)
        N = 200
        expected = special.gammaln(N - 2) - special.gammaln(N + 1)
        assert log_prior_N(p, N) == pytest.approx(expected, rel=1e-13)

    def test_flat_is_constant(self):
        p = SizePrior.flat(40)
        vals = log_prior_N(p, np.arange(40, 800))
        assert np.all(vals == vals[0])

    def test_off_grid_is_minus_inf(self):
        p = SizePrior.flat(40, N_max=100)
        assert log_prior_N(p, 39) == -math.inf
        assert log_prior_N(p, 101) == -math.inf

    def test_beta_at_n_limits(self):
        n = 100
        assert log_prior_N(SizePrior.beta_proportion(n, 1.0, 2.0), n) == -math.inf
        assert math.isfinite(log_prior_N(SizePrior.beta_proportion(n, 1.0, 1.0), n))
        small = SizePrior.beta_proportion(n, 1.0, 0.5)
        # boundary cell holds its integrated mass over [n, n+1)
        assert math.exp(log_prior_N(small, n)) == pytest.approx(special.betainc(0.5, 1.0, 1 / (n + 1)), rel=1e-12)

    def test_beta_matches_displayed_form_for_alpha_one(self):
        n, b = 200, 2.5
        p = SizePrior.beta_proportion(n, 1.0, b)
        for N in (250, 900, 4000):
            displayed = math.log(b * n) + (b - 1) * math.log(N - n) - (1 + b) * math.log(N)
            assert log_prior_N(p, N) == pytest.approx(displayed, rel=1e-12)


# ------------------------------------------------------------------ #
# Grid properties
# ------------------------------------------------------------------ #


class TestGrid:
    @pytest.mark.parametrize(
        "prior",
        [
            SizePrior.flat(100),
            SizePrior.factorial(100, l=1),
            SizePrior.factorial(100, l=4),
            SizePrior.beta_proportion(100, 1.0, 0.6, N_max=200_000),
            SizePrior.beta_proportion(100, 2.0, 3.0, N_max=300_000),
        ],
        ids=["flat", "fjj1", "fjj4", "beta-small", "beta"],
    )
    def test_normalized_exactly(self, prior):
        assert abs(prior.masses().sum() - 1.0) < 1e-10

    def test_huge_grid_normalization_matches_exact_head(self):
        p = SizePrior.beta_proportion(100, 1.0, 1.0)
        assert p.N_max > 10**7
        # exact sum of a prefix plus the analytic tail mass of the continuous law
        cut = 5_000_000
        head = p.masses(100, cut).sum()
        tail = p.partial_mass(cut + 1, p.N_max)
        assert head + tail == pytest.approx(1.0, abs=1e-10)

    def test_beta_tail_exponent(self):
        a, b = 2.0, 3.0
        p = SizePrior.beta_proportion(100, a, b)
        gap = log_prior_N(p, 10_000) - log_prior_N(p, 20_000)
        assert gap == pytest.approx((a + 1) * math.log(2), rel=0.05)

    @pytest.mark.parametrize("n", [100, 500])
    @pytest.mark.parametrize("beta", [1, 2, 3])
    def test_mode_and_median_closed_forms(self, n, beta):
        p = SizePrior.beta_proportion(n, 1.0, float(beta))
        assert abs(p.mode - 0.5 * n * (beta + 1)) <= 1
        assert abs(p.median - n / (1 - 0.5 ** (1 / beta))) <= 1
        assert p.partial_mass(n, p.N_max) == pytest.approx(1.0, abs=1e-10)

    def test_monotone_tail_beyond_mode(self):
        p = SizePrior.beta_proportion(100, 1.0, 3.0)
        lm = log_prior_N(p, np.arange(p.mode + 1, p.mode + 20_000))
        assert np.all(np.diff(lm) < 0)

    def test_default_n_max_rule(self):
        p = SizePrior.beta_proportion(100, 1.0, 3.0)
        assert p.N_max >= 20 * 100
        assert p.partial_mass(p.N_max, p.N_max) < 1e-6
        assert 1 - p.cdf(p.N_max - 1) < 1e-5

    def test_quantile_inverts_cdf(self):
        p = SizePrior.beta_proportion(300, 1.0, 2.0)
        for q in (0.1, 0.5, 0.9, 0.999):
            k = p.quantile(q)
            assert p.cdf(k) >= q > p.cdf(k - 1)

    def test_n_max_below_n_rejected(self):
        with pytest.raises(ValidationError):
            SizePrior.flat(100, N_max=100)

    def test_point_mass(self):
        p = TabulatedSizePrior.point_mass(10, 17)
        assert p.median == 17 and p.mode == 17
        assert log_prior_N(p, 17) == 0.0
        assert log_prior_N(p, 16) == -math.inf


# ------------------------------------------------------------------ #
# Elicitation
# ------------------------------------------------------------------ #


class TestElicitation:
    def test_mode(self):
        assert beta_from_elicitation(500, mode=1000) == pytest.approx((1.0, 3.0))

    def test_median(self):
        assert beta_from_elicitation(500, median=1000) == pytest.approx((1.0, 1.0))

    def test_uniform_proportion_median_is_twice_n(self):
        p = SizePrior.beta_proportion(500, 1.0, 1.0)
        assert abs(p.median - 1000) <= 1

    def test_mean_and_lower_quartile(self):
        n, mean, q = 184, 838.0, 560.0
        a, b = beta_from_elicitation(n, mean=mean, lower_quartile=q)
        # continuous-form check: Beta(a, b) on n/N
        assert n * (a + b - 1) / (a - 1) == pytest.approx(mean, rel=1e-6)
        assert special.betainc(a, b, n / q) == pytest.approx(0.75, abs=1e-6)

    def test_target_below_n(self):
        with pytest.raises(ElicitationError):
            beta_from_elicitation(500, mode=400)
        with pytest.raises(ElicitationError):
            beta_from_elicitation(500, median=500)
        with pytest.raises(ElicitationError):
            beta_from_elicitation(500, mean=800, lower_quartile=900)

    def test_needs_a_target(self):
        with pytest.raises(ElicitationError):
            beta_from_elicitation(500)

    @settings(max_examples=30, deadline=None)
    @given(ratio=st.floats(1.05, 20.0))
    def test_mode_round_trip(self, ratio):
        n = 200
        _, b = beta_from_elicitation(n, mode=ratio * n)
        assert 0.5 * n * (b + 1) == pytest.approx(ratio * n, rel=1e-12)


# ------------------------------------------------------------------ #
# Unit-size parameter prior
# ------------------------------------------------------------------ #


class TestEtaPrior:
    def test_defaults(self):
        p = EtaPrior()
        assert (p.mu0, p.df_mean, p.sigma0, p.df_sigma) == (7.0, 1.0, 3.0, 5.0)
        assert math.isfinite(log_prior_eta(p, 7.0, 3.0))

    def test_mode_in_mu_is_mu0(self):
        p = EtaPrior()
        mus = np.linspace(0, 14, 281)
        vals = [log_prior_eta(p, m, 2.5) for m in mus]
        assert mus[int(np.argmax(vals))] == pytest.approx(7.0)

    def test_nonpositive_sigma(self):
        assert log_prior_eta(EtaPrior(), 7.0, 0.0) == -math.inf
        assert log_prior_eta(EtaPrior(), 7.0, -1.0) == -math.inf

    def test_integrates_to_one(self):
        p = EtaPrior()
        val, _ = integrate.dblquad(
            lambda mu, s: math.exp(log_prior_eta(p, mu, s)), 1e-6, 80, lambda s: -150, lambda s: 150
        )
        assert val == pytest.approx(1.0, abs=0.02)

    def test_sigma_marginal_is_scaled_inverse_chi(self):
        # sigma^2 ~ Scaled-Inv-Chi2(df, s0^2): P(sigma <= s) = P(chi2_df >= df s0^2 / s^2)
        p = EtaPrior()
        s = 4.0
        val, _ = integrate.dblquad(
            lambda mu, sg: math.exp(log_prior_eta(p, mu, sg)), 1e-6, s, lambda sg: -150, lambda sg: 150
        )
        from scipy.stats import chi2

        assert val == pytest.approx(chi2.sf(p.df_sigma * p.sigma0**2 / s**2, p.df_sigma), abs=1e-4)

    def test_invalid_hyperparameters(self):
        with pytest.raises(ValidationError):
            EtaPrior(df_mean=0)
