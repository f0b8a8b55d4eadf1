"""Tests for the Gibbs samplers and their single-step updates."""

import math

import numpy as np
import pytest
from scipy import optimize, stats

from fixtures import desk_sample
from oracles import chi2_pvalue, n_weights, tilted_pmf, toy_posterior_N, ztp_gamma, ztp_mean, ztp_pmf
from sspsize.engine import (
    ChainState,
    McmcConfig,
    ObservedSequence,
    r_sequence,
    run_known_N,
    run_unknown_N,
    sample_eta_mh,
    sample_N,
    sample_psi,
    sample_unobs,
)
from sspsize.exceptions import ValidationError
from sspsize.priors import DiscreteEtaPrior, EtaPrior, SizePrior, TabulatedSizePrior
from sspsize.sizedist import UnitSizeModel

# ------------------------------------------------------------------ #
# Toy problem: sizes in {1, 2}, n = 3, N in 3..8, two-point eta grid
# ------------------------------------------------------------------ #

TOY_U = (2, 2, 1)
TOY_LAMBDAS = (0.5, 2.0)


def toy_models(cap=2):
    return [UnitSizeModel.from_params("ztp", (lam,), support_cap=cap) for lam in TOY_LAMBDAS]


def toy_exact():
    models = toy_models()
    return toy_posterior_N(TOY_U, range(3, 9), np.ones(6), [m.pmf_values for m in models], [0.5, 0.5])


def toy_chain(step_order=("eta", "psi", "unobs"), seed=11, n_draws=40_000):
    data = ObservedSequence(np.array(TOY_U))
    config = McmcConfig(burn_in=500, thin=1, n_draws=n_draws, seed=seed, step_order=step_order)
    return run_unknown_N(data, SizePrior.flat(3, N_max=8), DiscreteEtaPrior(toy_models()), config)


def tv_distance(draws, exact, lo):
    freq = np.bincount(draws - lo, minlength=exact.size)[: exact.size] / draws.size
    return 0.5 * np.abs(freq - exact).sum()


def make_state(N, model, u_unobs=None, psi=None, n=1):
    u_unobs = np.ones(N - n, dtype=np.int64) if u_unobs is None else np.asarray(u_unobs)
    psi = np.zeros(n) if psi is None else np.asarray(psi, dtype=float)
    return ChainState(N=N, model=model, u_unobs=u_unobs, psi=psi)


# ------------------------------------------------------------------ #
# r sequence
# ------------------------------------------------------------------ #


class TestRSequence:
    def test_small_example(self):
        assert r_sequence((2, 1), (3,)).tolist() == [6.0, 4.0]

    def test_census(self):
        assert r_sequence((5,), ()).tolist() == [5.0]

    def test_telescoping(self, rng):
        u_obs = rng.integers(1, 20, 40)
        u_unobs = rng.integers(1, 20, 70)
        r = r_sequence(u_obs, u_unobs)
        assert r[-1] - u_obs[-1] == u_unobs.sum()
        assert r[0] == u_obs.sum() + u_unobs.sum()
        assert np.all(np.diff(r) < 0)


# ------------------------------------------------------------------ #
# Exponential latents
# ------------------------------------------------------------------ #


class TestSamplePsi:
    def test_mean_is_inverse_rate(self, rng):
        data = ObservedSequence(np.array([4, 2, 3]))
        state = make_state(6, UnitSizeModel.from_params("ztp", (2.0,)), u_unobs=[1, 5, 2], n=3)
        r = r_sequence(data.u_obs, state.u_unobs)
        draws = np.array([sample_psi(data, state, rng) for _ in range(100_000)])
        se = draws.std(axis=0) / math.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - 1 / r) < 4 * se)
        assert np.all(draws >= 0)

    def test_scaling_sizes_scales_draws(self):
        c = 3
        model = UnitSizeModel.from_params("ztp", (2.0,))
        a = sample_psi(ObservedSequence(np.array([4, 2])), make_state(4, model, [1, 5], n=2), np.random.default_rng(1))
        b = sample_psi(
            ObservedSequence(np.array([4, 2]) * c), make_state(4, model, np.array([1, 5]) * c, n=2), np.random.default_rng(1)
        )
        assert np.allclose(b, a / c, rtol=1e-15)


# ------------------------------------------------------------------ #
# Unobserved sizes
# ------------------------------------------------------------------ #


class TestSampleUnobs:
    def test_zero_tilt_is_plain_draw(self):
        model = UnitSizeModel.from_moments("cmp", 7.0, 3.0)
        state = make_state(51, model, psi=np.zeros(1))
        a = sample_unobs(state, 1, np.random.default_rng(4))
        b = model.sample(np.random.default_rng(4), 50)
        assert np.array_equal(a, b)

    def test_census_is_empty(self, rng):
        state = make_state(3, UnitSizeModel.from_params("ztp", (1.0,)), n=3, psi=[0.1, 0.2, 0.3])
        assert sample_unobs(state, 3, rng).size == 0

    def test_matches_tilted_pmf(self, rng):
        model = UnitSizeModel.from_params("ztp", (3.0,), support_cap=30)
        state = make_state(100_002, model, n=2, psi=[0.25, 0.15])
        x = sample_unobs(state, 2, rng)
        assert x.size == 100_000
        assert chi2_pvalue(x, tilted_pmf(model.pmf_values, 0.4), range(1, 31)) > 0.001


# ------------------------------------------------------------------ #
# Metropolis-Hastings step for eta
# ------------------------------------------------------------------ #


class TestSampleEtaMH:
    def test_current_point_always_accepted(self, rng):
        data = ObservedSequence(np.array([5, 9, 3, 7]))
        model = UnitSizeModel.from_moments("cmp", 6.0, 2.5)
        state = make_state(10, model, u_unobs=[4, 6, 2, 8, 5, 7], n=4)
        for _ in range(200):
            new, _, accepted = sample_eta_mh(data, state, EtaPrior(), rng, 0.0, 0.0)
            assert accepted and new is model

    def test_infeasible_proposal_rejected(self, rng):
        # sd proposals near the geometric ceiling at mean ~1.5 are often infeasible
        data = ObservedSequence(np.array([1, 2, 1, 1]))
        model = UnitSizeModel.from_moments("cmp", 1.5, 0.8)
        state = make_state(4, model, n=4, psi=np.zeros(4))
        outcomes = [sample_eta_mh(data, state, EtaPrior(), rng, 1.0, 1.5) for _ in range(300)]
        assert any(not ok for _, _, ok in outcomes)

    def test_two_point_detailed_balance(self, rng):
        models = [UnitSizeModel.from_params("ztp", (lam,), support_cap=12) for lam in (2.0, 3.0)]
        prior = DiscreteEtaPrior(models, weights=[0.3, 0.7])
        data = ObservedSequence(np.array([3, 2, 4]))
        state = make_state(6, models[0], u_unobs=[1, 2, 3], n=3)
        counts = np.zeros((2, 2))
        for _ in range(100_000):
            model, idx, _ = sample_eta_mh(data, state, prior, rng, 0.0, 0.0)
            counts[state.eta_index, idx] += 1
            state.model, state.eta_index = model, idx
        flow = counts[0, 1] - counts[1, 0]
        assert abs(flow) <= 3 * math.sqrt(counts[0, 1] + counts[1, 0])
        # stationary mass against the exact conditional
        sizes = [3, 2, 4, 1, 2, 3]
        w = np.array([0.3, 0.7]) * [np.prod([m.pmf(u) for u in sizes]) for m in models]
        pi = w / w.sum()
        occupancy = counts.sum(axis=1) / counts.sum()
        assert abs(occupancy[0] - pi[0]) < 0.01

    def test_acceptance_rate_on_desk_fixture(self):
        # default scales, population size held at the simulated truth
        sample = desk_sample(0)
        draws = run_known_N(sample.data, 300, config=McmcConfig(burn_in=500, thin=2, n_draws=1000, seed=0))
        assert 0.1 < draws.acceptance_rate < 0.7


# ------------------------------------------------------------------ #
# Population-size draw
# ------------------------------------------------------------------ #


class TestSampleN:
    def test_no_tilt_flat_prior_mode_is_n_max(self, rng):
        prior = SizePrior.flat(10, N_max=60)
        model = UnitSizeModel.from_params("ztp", (1.0,))
        N, w = n_weights(10, 60, lambda k: 0.0, 1.0)
        assert np.all(np.diff(w) > 0)
        draws = np.array([sample_N(10, 0.0, model, prior, rng) for _ in range(20_000)])
        assert np.bincount(draws).argmax() == 60
        assert draws.min() >= 10 and draws.max() <= 60

    def test_point_mass_prior(self, rng):
        prior = TabulatedSizePrior.point_mass(5, 9)
        model = UnitSizeModel.from_params("ztp", (1.0,))
        assert {sample_N(5, s, model, prior, rng) for s in (0.0, 0.1, 2.0) for _ in range(50)} == {9}

    def test_tiny_instance_matches_weights(self, rng):
        model = UnitSizeModel.from_params("ztp", (1.0,), support_cap=40)
        s = 0.3
        prior = SizePrior.flat(2, N_max=5)
        N, w = n_weights(2, 5, lambda k: 0.0, ztp_gamma(1.0, s))
        draws = np.array([sample_N(2, s, model, prior, rng) for _ in range(100_000)])
        assert chi2_pvalue(draws, w, N) > 0.001

    def test_beta_prior_matches_truncated_weights(self, rng):
        model = UnitSizeModel.from_moments("cmp", 7.0, 3.0)
        prior = SizePrior.beta_proportion(20, 1.0, 2.0, N_max=400)
        s = 0.01
        N, w = n_weights(20, 400, lambda k: float(prior.log_prior_N(k)), model.gamma_tilt(s))
        draws = np.array([sample_N(20, s, model, prior, rng) for _ in range(50_000)])
        assert chi2_pvalue(draws, w, N) > 0.001


# ------------------------------------------------------------------ #
# Known-N sampler
# ------------------------------------------------------------------ #


def ztp_lambda(mu):
    return optimize.brentq(lambda lam: ztp_mean(lam) - mu, 1e-9, 10 * mu)


class TestRunKnownN:
    def test_census_matches_quadrature(self):
        rng = np.random.default_rng(3)
        u = UnitSizeModel.from_params("ztp", (2.0,)).sample(rng, 40)
        data = ObservedSequence(u)
        prior = EtaPrior()
        draws = run_known_N(data, 40, prior, McmcConfig(burn_in=500, thin=2, n_draws=5000, seed=1), family="ztp")

        mus = np.linspace(1.0005, 8.0, 4000)
        logp = np.array(
            [prior.log_density_mean(m) + sum(math.log(ztp_pmf(ztp_lambda(m), int(k))) for k in u) for m in mus]
        )
        w = np.exp(logp - logp.max())
        exact = (mus * w).sum() / w.sum()
        assert draws.mu.mean() == pytest.approx(exact, rel=0.02)

    def test_deterministic(self):
        data = desk_sample(1, N=80, n=40).data
        config = McmcConfig(burn_in=50, thin=2, n_draws=100, seed=9)
        a = run_known_N(data, 80, config=config)
        b = run_known_N(data, 80, config=config)
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.sigma, b.sigma)
        assert np.array_equal(a.mean_size, b.mean_size)

    def test_worker_count_does_not_change_draws(self):
        data = desk_sample(2, N=60, n=30).data
        serial = run_known_N(data, 60, config=McmcConfig(burn_in=20, thin=1, n_draws=50, parallel_chains=2, n_jobs=1))
        pooled = run_known_N(data, 60, config=McmcConfig(burn_in=20, thin=1, n_draws=50, parallel_chains=2, n_jobs=2))
        assert np.array_equal(serial.mu, pooled.mu)
        assert serial.chain.tolist() == pooled.chain.tolist()
        assert len(serial) == 100

    def test_steeper_decline_lowers_predictive_mean(self):
        u = np.sort(desk_sample(4).data.u_obs)
        config = McmcConfig(burn_in=200, thin=2, n_draws=1000, seed=5)
        steep = run_known_N(ObservedSequence(u[::-1]), 300, config=config)
        flat = run_known_N(ObservedSequence(np.random.default_rng(0).permutation(u)), 300, config=config)
        assert steep.mean_size.mean() < flat.mean_size.mean()

    def test_below_sample_size(self):
        with pytest.raises(ValidationError):
            run_known_N(ObservedSequence(np.array([1, 2, 3])), 2)


# ------------------------------------------------------------------ #
# Unknown-N sampler
# ------------------------------------------------------------------ #


class TestRunUnknownN:
    @pytest.mark.parametrize("order", [("eta", "psi", "unobs"), ("psi", "eta", "unobs")], ids=["eta-first", "psi-first"])
    def test_toy_oracle(self, order):
        exact = toy_exact()
        draws = toy_chain(order)
        assert tv_distance(draws.N, exact, 3) < 0.05

    def test_point_mass_reduces_to_known_N(self):
        data = desk_sample(6, N=60, n=30).data
        config = McmcConfig(burn_in=200, thin=20, n_draws=500, seed=3)
        fixed = run_unknown_N(data, TabulatedSizePrior.point_mass(30, 60), config=config)
        known = run_known_N(data, 60, config=McmcConfig(burn_in=200, thin=20, n_draws=500, seed=4))
        assert set(fixed.N.tolist()) == {60}
        assert stats.ks_2samp(fixed.mu, known.mu).pvalue > 0.01

    def test_state_shape_invariant(self, rng):
        data = ObservedSequence(np.array(TOY_U))
        prior = DiscreteEtaPrior(toy_models())
        size_prior = SizePrior.flat(3, N_max=8)
        state = make_state(5, prior.models[0], u_unobs=[1, 2], n=3)
        for _ in range(2000):
            state.model, state.eta_index, _ = sample_eta_mh(data, state, prior, rng, 0.0, 0.0)
            state.psi = sample_psi(data, state, rng)
            state.N = sample_N(3, float(state.psi.sum()), state.model, size_prior, rng)
            state.u_unobs = sample_unobs(state, 3, rng)
            assert state.u_unobs.size == state.N - 3
            assert np.all(state.psi >= 0)

    def test_draw_count(self):
        data = ObservedSequence(np.array(TOY_U))
        config = McmcConfig(burn_in=10, thin=3, n_draws=40, parallel_chains=3)
        draws = run_unknown_N(data, SizePrior.flat(3, N_max=8), DiscreteEtaPrior(toy_models()), config)
        assert len(draws) == 120 and sorted(set(draws.chain.tolist())) == [0, 1, 2]

    def test_prior_for_other_sample_size(self):
        with pytest.raises(ValidationError):
            run_unknown_N(ObservedSequence(np.array(TOY_U)), SizePrior.flat(4, N_max=8))

    def test_geweke_joint_distribution(self):
        """Gibbs with data resimulated each sweep must leave the joint prior
        of (N, eta) invariant."""
        rng = np.random.default_rng(77)
        models = toy_models(cap=3)
        prior = DiscreteEtaPrior(models)
        size_prior = SizePrior.flat(3, N_max=8)
        n = 3
        N = 5
        idx = 0
        sizes = models[idx].sample(rng, N)
        order = rng.permutation(N)
        data = ObservedSequence(sizes[order[:n]])
        state = ChainState(N=N, model=models[idx], u_unobs=sizes[order[n:]], psi=np.zeros(n), eta_index=idx)
        M = 40_000
        trace_N = np.empty(M)
        trace_mu = np.empty(M)
        for t in range(M):
            state.model, state.eta_index, _ = sample_eta_mh(data, state, prior, rng, 0.0, 0.0)
            state.psi = sample_psi(data, state, rng)
            state.N = sample_N(n, float(state.psi.sum()), state.model, size_prior, rng)
            state.u_unobs = sample_unobs(state, n, rng)
            # resimulate the ordered sample from the full population
            full = np.concatenate([data.u_obs, state.u_unobs])
            keys = rng.standard_exponential(full.size) / full
            picked = np.argsort(keys)[:n]
            rest = np.setdiff1d(np.arange(full.size), picked)
            data = ObservedSequence(full[picked])
            state.u_unobs = full[rest]
            trace_N[t] = state.N
            trace_mu[t] = state.model.mean

        def batch_se(x, batches=40):
            means = x.reshape(batches, -1).mean(axis=1)
            return means.std(ddof=1) / math.sqrt(batches)

        assert abs(trace_N.mean() - 5.5) < 4 * batch_se(trace_N)
        exact_mu = np.mean([m.mean for m in models])
        assert abs(trace_mu.mean() - exact_mu) < 4 * batch_se(trace_mu)


# ------------------------------------------------------------------ #
# Config
# ------------------------------------------------------------------ #


class TestMcmcConfig:
    def test_defaults(self):
        c = McmcConfig()
        assert (c.burn_in, c.thin, c.n_draws, c.log_sigma_scale) == (1000, 10, 2000, 0.2)

    @pytest.mark.parametrize("field", ["thin", "n_draws", "parallel_chains"])
    def test_positive(self, field):
        with pytest.raises(ValidationError):
            McmcConfig(**{field: 0})

    def test_step_order_is_permutation(self):
        with pytest.raises(ValidationError):
            McmcConfig(step_order=("eta", "eta", "psi"))

    def test_observed_sequence_validation(self):
        with pytest.raises(ValidationError):
            ObservedSequence(np.array([1, 0, 2]))
        with pytest.raises(ValidationError):
            ObservedSequence(np.array([1, 2]), trait=[True])
