import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import logsumexp
from scipy.stats import poisson

from oracles import poisson_hmm_loglik, random_counts, random_theta, textbook_poisson_hmm
from swhawkes.core import BinnedSeries, DiscreteParams, auxiliary_path, log_poisson_pmf, validate
from swhawkes.errors import NumericalUnderflow, TooLarge
from swhawkes.inference import (
    EMConfig,
    _ascend,
    backward_smooth,
    e_step,
    exact_log_lik,
    exact_posterior,
    fit_em,
    forward,
    grad_q,
    init_params,
    m_step,
    q_function,
)
from swhawkes.simulate import sample_discrete


def _fwd(y, theta):
    return forward(y, auxiliary_path(y, theta.alpha, theta.beta), theta)


class TestForward:
    def test_single_state(self, rng):
        th = DiscreteParams([1.0], [[1.0]], [0.7], 0.3, 0.4)
        y = BinnedSeries(random_counts(rng, 50))
        F, ll = _fwd(y, th)
        u = auxiliary_path(y, 0.3, 0.4)
        assert ll == pytest.approx(float(np.sum(poisson.logpmf(y.counts, 0.7 + u))), rel=1e-12)
        np.testing.assert_array_equal(F, 1.0)

    def test_zero_memory_matches_textbook(self, rng):
        for _ in range(10):
            Q = int(rng.integers(2, 4))
            th = random_theta(rng, Q)
            th = DiscreteParams(th.nu, th.pi, th.mu, 0.0, 0.0)
            y = BinnedSeries(random_counts(rng, 300))
            _, ll = _fwd(y, th)
            assert ll == pytest.approx(poisson_hmm_loglik(y.counts, th.nu, th.pi, th.mu), rel=1e-10)

    def test_matches_enumeration(self, rng):
        for _ in range(40):
            Q, n = int(rng.integers(1, 4)), int(rng.integers(1, 8))
            th, y = random_theta(rng, Q), BinnedSeries(random_counts(rng, n))
            assert _fwd(y, th)[1] == pytest.approx(exact_log_lik(y, th), abs=1e-10)

    def test_underflow_is_reported(self):
        th = DiscreteParams([1.0, 0.0], [[1.0, 0.0], [0.0, 1.0]], [0.0, 5.0])
        with pytest.raises(NumericalUnderflow, match="bin 1"):
            _fwd(BinnedSeries([0, 3]), th)


class TestExact:
    def test_single_bin_is_mixture(self, rng):
        th = random_theta(rng, 3)
        want = logsumexp(np.log(th.nu) + poisson.logpmf(4, th.mu))
        assert exact_log_lik(BinnedSeries([4]), th) == pytest.approx(want, abs=1e-12)

    def test_single_state(self, rng):
        th = random_theta(rng, 1)
        y = BinnedSeries(random_counts(rng, 10))
        assert exact_log_lik(y, th) == pytest.approx(_fwd(y, th)[1], abs=1e-12)

    def test_guard(self):
        with pytest.raises(TooLarge):
            exact_log_lik(BinnedSeries(np.ones(13, int)), random_theta(np.random.default_rng(0), 2))


class TestBackward:
    def test_single_state(self, rng):
        th = random_theta(rng, 1)
        post = e_step(BinnedSeries(random_counts(rng, 20)), th)
        np.testing.assert_allclose(post.tau, 1.0)
        np.testing.assert_allclose(post.eta, 1.0)

    def test_matches_enumeration(self, rng):
        for _ in range(30):
            Q, n = int(rng.integers(2, 4)), int(rng.integers(2, 8))
            th, y = random_theta(rng, Q), BinnedSeries(random_counts(rng, n))
            post = e_step(y, th)
            np.testing.assert_allclose(post.tau, exact_posterior(y, th), atol=1e-10)

    def test_posterior_invariants(self, rng):
        for _ in range(20):
            Q = int(rng.integers(1, 5))
            th, y = random_theta(rng, Q), BinnedSeries(random_counts(rng, 400))
            post = e_step(y, th)
            np.testing.assert_allclose(post.tau.sum(axis=1), 1.0, atol=1e-10)
            np.testing.assert_allclose(post.eta.sum(axis=(1, 2)), 1.0, atol=1e-10)
            np.testing.assert_allclose(post.eta.sum(axis=2), post.tau[:-1], atol=1e-10)
            np.testing.assert_allclose(post.eta.sum(axis=1), post.tau[1:], atol=1e-10)
            assert math.isfinite(post.log_lik)

    def test_unreachable_state_gets_zero(self):
        # state 1 can never be entered, so every G for it is zero
        th = DiscreteParams([1.0, 0.0], [[1.0, 0.0], [0.5, 0.5]], [1.0, 2.0])
        y = BinnedSeries([1, 2, 0, 1])
        F, ll = _fwd(y, th)
        post = backward_smooth(F, th, ll)
        np.testing.assert_allclose(post.tau[:, 1], 0.0)
        assert np.all(np.isfinite(post.eta))


def _posterior(rng, Q, n):
    th, y = random_theta(rng, Q), BinnedSeries(random_counts(rng, n))
    return th, y, e_step(y, th)


class TestQFunction:
    def test_single_state_equals_loglik(self, rng):
        th, y, post = _posterior(rng, 1, 60)
        assert q_function(th, post.tau, post.eta, y) == pytest.approx(post.log_lik, rel=1e-12)

    def test_zero_nu_with_mass_is_minus_inf(self, rng):
        th, y, post = _posterior(rng, 2, 10)
        bad = DiscreteParams([0.0, 1.0], th.pi, th.mu, th.alpha, th.beta)
        tau = post.tau.copy()
        tau[0] = [0.5, 0.5]
        assert q_function(bad, tau, post.eta, y) == -math.inf

    def test_zero_memory_zero_counts_gradient(self, rng):
        tau = rng.dirichlet(np.ones(3), size=25)
        th = DiscreteParams(np.ones(3) / 3, np.ones((3, 3)) / 3, [0.5, 1.0, 2.0], 0.0, 0.0)
        _, _, d_mu = grad_q(th, tau, BinnedSeries(np.zeros(25, int)))
        np.testing.assert_allclose(d_mu, -tau.sum(axis=0), rtol=1e-14)

    def test_gradient_finite_differences(self, rng):
        h = 1e-6
        for _ in range(30):
            Q = int(rng.integers(1, 4))
            th, y, post = _posterior(rng, Q, int(rng.integers(5, 200)))
            # evaluate at a different point than the posterior was computed at
            th = random_theta(rng, Q)
            d_a, d_b, d_mu = grad_q(th, post.tau, y)

            def qf(mu=th.mu, alpha=th.alpha, beta=th.beta):
                return q_function(DiscreteParams(th.nu, th.pi, mu, alpha, beta), post.tau, post.eta, y)

            fd_a = (qf(alpha=th.alpha + h) - qf(alpha=th.alpha - h)) / (2 * h)
            fd_b = (qf(beta=th.beta + h) - qf(beta=th.beta - h)) / (2 * h)
            assert d_a == pytest.approx(fd_a, rel=1e-5, abs=1e-6)
            assert d_b == pytest.approx(fd_b, rel=1e-5, abs=1e-6)
            for q in range(Q):
                e = np.zeros(Q)
                e[q] = h
                fd = (qf(mu=th.mu + e) - qf(mu=th.mu - e)) / (2 * h)
                assert d_mu[q] == pytest.approx(fd, rel=1e-5, abs=1e-6)


class TestMStep:
    def test_diagonal_transitions_give_identity(self, rng):
        th, y, post = _posterior(rng, 3, 30)
        eta = np.zeros_like(post.eta)
        for k in range(eta.shape[0]):
            eta[k] = np.diag(post.tau[k])
        new = m_step(post.tau, eta, y, th)
        np.testing.assert_allclose(new.pi, np.eye(3), atol=1e-12)

    def test_unvisited_state_row_is_uniform(self, rng):
        th, y, post = _posterior(rng, 2, 30)
        tau = np.column_stack([np.ones(30), np.zeros(30)])
        eta = np.zeros((29, 2, 2))
        eta[:, 0, 0] = 1.0
        new = m_step(tau, eta, y, th)
        np.testing.assert_allclose(new.pi, [[1.0, 0.0], [0.5, 0.5]])
        validate(new)

    def test_poisson_mle_by_ascent(self, rng):
        y = BinnedSeries(rng.poisson(2.3, size=500))
        tau = np.ones((500, 1))
        cfg = EMConfig()
        mu, alpha, beta, stationary = _ascend(y, tau, np.array([0.1]), 0.0, 0.0, cfg, memory=False)
        assert (alpha, beta) == (0.0, 0.0)
        assert mu[0] == pytest.approx(y.counts.mean(), abs=1e-8)
        assert stationary
        # first-order condition in the optimizer's coordinates
        _, _, d_mu = grad_q(DiscreteParams([1.0], [[1.0]], mu), tau, y)
        assert abs((mu[0] - cfg.mu_floor) * d_mu[0]) <= cfg.mstep_grad_tol

    def test_pinned_m_step(self, rng):
        th, y, post = _posterior(rng, 2, 80)
        new = m_step(post.tau, post.eta, y, th, EMConfig(pin_alpha_zero=True))
        assert (new.alpha, new.beta) == (0.0, 0.0)
        w = post.tau
        np.testing.assert_allclose(new.mu, (w * y.y[:, None]).sum(0) / w.sum(0), rtol=1e-8)

    def test_generalized_em_contract(self, rng):
        for _ in range(100):
            Q = int(rng.integers(1, 4))
            th, y, post = _posterior(rng, Q, int(rng.integers(2, 300)))
            before = q_function(th, post.tau, post.eta, y)
            new = m_step(post.tau, post.eta, y, th)
            validate(new)
            assert q_function(new, post.tau, post.eta, y) >= before - 1e-12


class TestInit:
    def test_single_state(self, rng):
        y = BinnedSeries(rng.poisson(1.5, size=300))
        th = init_params(y, 1, seed=3)
        np.testing.assert_array_equal(th.nu, [1.0])
        np.testing.assert_array_equal(th.pi, [[1.0]])
        ratio = th.alpha / (1 - th.beta)
        assert th.mu[0] == pytest.approx(y.counts.mean() * (1 - ratio), rel=1e-9)

    @pytest.mark.parametrize("Q", [2, 3, 4])
    def test_constant_series(self, Q):
        y = BinnedSeries(np.full(200, 3))
        th = init_params(y, Q, seed=1, cfg=EMConfig(pin_alpha_zero=True))
        # documented jitter: at most 1.5% of the mean above the block mean
        assert np.all(np.abs(th.mu - 3.0) <= 0.015 * 3.0 + 1e-9)
        assert len(np.unique(th.mu)) == Q

    def test_deterministic(self, rng):
        y = BinnedSeries(rng.poisson(2.0, size=200))
        a, b = init_params(y, 3, seed=11), init_params(y, 3, seed=11)
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.pi, b.pi)
        assert (a.alpha, a.beta) == (b.alpha, b.beta)


class TestFit:
    def test_homogeneous_recovery(self):
        truth = DiscreteParams([1.0], [[1.0]], [0.6], 0.2, 0.2)
        est = []
        for rep in range(20):
            counts, _ = sample_discrete(truth, 10_000, seed=1000 + rep)
            th = fit_em(BinnedSeries(counts), 1).theta_hat
            est.append([th.mu[0], th.alpha, th.beta])
        est = np.array(est)
        se = est.std(axis=0, ddof=1) / np.sqrt(len(est))
        assert np.all(np.abs(est.mean(axis=0) - [0.6, 0.2, 0.2]) <= 3 * se)

    def test_likelihood_monotone(self, rng):
        for rep in range(8):
            Q = int(rng.integers(1, 4))
            truth = random_theta(rng, Q)
            counts, _ = sample_discrete(truth, 400, seed=rep)
            fit = fit_em(BinnedSeries(counts), Q)
            assert np.all(np.diff(fit.trace) >= -1e-9)
            assert fit.n_iter <= EMConfig().max_iter

    def test_pinned_matches_textbook_baum_welch(self, rng):
        truth = DiscreteParams([0.5, 0.5], [[0.95, 0.05], [0.1, 0.9]], [0.5, 4.0])
        counts, _ = sample_discrete(truth, 600, seed=5)
        y = BinnedSeries(counts)
        init = DiscreteParams([0.5, 0.5], [[0.8, 0.2], [0.2, 0.8]], [1.0, 3.0])
        fit = fit_em(y, 2, EMConfig(pin_alpha_zero=True, tau_tol=1e-12, max_iter=5000), init=init)
        _, _, lam, ll = textbook_poisson_hmm(counts, init.nu, init.pi, init.mu)
        assert fit.log_lik == pytest.approx(ll, abs=1e-6)
        np.testing.assert_allclose(np.sort(fit.theta_hat.mu), np.sort(lam), rtol=1e-5)
        assert (fit.theta_hat.alpha, fit.theta_hat.beta) == (0.0, 0.0)

    def test_single_state_is_homogeneous_mle(self, rng):
        truth = DiscreteParams([1.0], [[1.0]], [0.8], 0.3, 0.5)
        counts, _ = sample_discrete(truth, 3000, seed=2)
        y = BinnedSeries(counts)
        fit = fit_em(y, 1)
        # independent check: a generic optimizer on the exact log-likelihood
        from scipy.optimize import minimize

        def nll(x):
            mu, alpha, beta = x
            if mu <= 0 or alpha < 0 or not 0 <= beta < 1 or alpha / (1 - beta) >= 1:
                return 1e10
            u = auxiliary_path(y, alpha, beta)
            return -float(np.sum(log_poisson_pmf(counts, mu + u)))

        th = fit.theta_hat
        res = minimize(nll, [th.mu[0], th.alpha, th.beta], method="Nelder-Mead",
                       options=dict(xatol=1e-10, fatol=1e-12, maxiter=20000))
        assert fit.log_lik >= -res.fun - 1e-6

    def test_permutation_equivariance(self, rng):
        truth = DiscreteParams(
            [0.3, 0.3, 0.4],
            [[0.9, 0.05, 0.05], [0.05, 0.9, 0.05], [0.05, 0.05, 0.9]],
            [0.1, 1.0, 4.0], 0.2, 0.5,
        )
        counts, _ = sample_discrete(truth, 800, seed=9)
        y = BinnedSeries(counts)
        init = init_params(y, 3, seed=0)
        cfg = EMConfig(tau_tol=1e-10)
        base = fit_em(y, 3, cfg, init=init)
        perm = np.array([2, 0, 1])
        other = fit_em(y, 3, cfg, init=init.permuted(perm))
        assert other.log_lik == pytest.approx(base.log_lik, abs=1e-9)
        want = base.theta_hat.permuted(perm)
        np.testing.assert_allclose(other.theta_hat.mu, want.mu, rtol=1e-6)
        np.testing.assert_allclose(other.theta_hat.nu, want.nu, atol=1e-6)
        np.testing.assert_allclose(other.theta_hat.pi, want.pi, atol=1e-6)

    def test_report_fields(self, rng):
        counts, _ = sample_discrete(random_theta(rng, 2), 200, seed=1)
        fit = fit_em(BinnedSeries(counts, 0.25), 2)
        d = fit.to_dict()
        assert set(d) == {"Q", "nu", "pi", "mu", "alpha", "beta", "log_lik", "aic", "n_iter", "converged", "delta"}
        assert d["aic"] == pytest.approx(d["log_lik"] - 6)
        assert d["delta"] == 0.25

    def test_multi_start_not_worse(self, rng):
        counts, _ = sample_discrete(random_theta(rng, 3), 300, seed=4)
        y = BinnedSeries(counts)
        one = fit_em(y, 3, EMConfig(seed=1))
        three = fit_em(y, 3, EMConfig(seed=1, n_starts=3))
        assert three.log_lik >= one.log_lik - 1e-9
