"""Exact-inference oracles: Kalman smoother, FFBS, and the grid HMM."""
import numpy as np
import pytest

import seqpool as sp
from seqpool.errors import ConfigError


class TestKalmanSmoother:
    def test_single_step_conjugate_update(self):
        """n=1: prior N(0, 1) and observation y=2 with tau=1 give posterior
        mean 1.0 and variance 0.5."""
        spec = sp.ModelSpec(P=1, n=1, phi=0.0, rho=0.0, obs=sp.GaussianObs(tau=1.0))
        res = sp.kalman_smoother(spec, np.array([[2.0]]))
        np.testing.assert_allclose(res.means[0, 0], 1.0, atol=1e-12)
        np.testing.assert_allclose(res.covariances[0, 0, 0], 0.5, atol=1e-12)

    def test_uninformative_observations_return_prior(self):
        spec = sp.ModelSpec(P=2, n=6, phi=0.9, rho=0.5, obs=sp.GaussianObs(tau=1e8))
        _, y = sp.simulate(spec, 1)
        res = sp.kalman_smoother(spec, y)
        assert np.abs(res.means).max() < 1e-4
        for i in range(6):
            np.testing.assert_allclose(res.covariances[i], spec.sigma_init, atol=1e-4)

    def test_requires_gaussian_observations(self):
        spec = sp.ModelSpec(P=1, n=3, phi=0.9, rho=0.0, obs=sp.AbsPoisson(sigma=0.8))
        with pytest.raises(ConfigError):
            sp.kalman_smoother(spec, np.zeros((3, 1)))

    def test_agrees_with_grid_oracle(self):
        spec = sp.ModelSpec(P=1, n=5, phi=0.9, rho=0.0, obs=sp.GaussianObs(tau=0.8))
        _, y = sp.simulate(spec, 2)
        res = sp.kalman_smoother(spec, y)
        post = sp.grid_hmm_posterior(spec, y, points=2000)
        np.testing.assert_allclose(post.mean(), res.means[:, 0], atol=1e-3)
        np.testing.assert_allclose(post.var(), res.covariances[:, 0, 0], atol=1e-3)

    def test_loglik_against_joint_gaussian(self):
        """Marginal likelihood cross-check: y is jointly Gaussian with
        covariance C_x + diag(tau^2) under this model."""
        spec = sp.ModelSpec(P=1, n=4, phi=0.8, rho=0.0, obs=sp.GaussianObs(tau=0.6))
        _, y = sp.simulate(spec, 3)
        res = sp.kalman_smoother(spec, y)
        k = 4
        C = np.empty((k, k))
        v = spec.sigma_init[0, 0]
        for i in range(k):
            for j in range(k):
                C[i, j] = v * 0.8 ** abs(i - j)
        C += np.eye(k) * 0.36
        from scipy.stats import multivariate_normal

        np.testing.assert_allclose(res.loglik, multivariate_normal(np.zeros(k), C).logpdf(y[:, 0]), rtol=1e-10)


class TestFfbs:
    def test_draw_moments_match_smoother(self):
        spec = sp.ModelSpec(P=1, n=6, phi=0.9, rho=0.0, obs=sp.GaussianObs(tau=0.7))
        _, y = sp.simulate(spec, 4)
        res = sp.kalman_smoother(spec, y)
        draw = sp.ffbs_sampler(spec, y)
        rng = sp.chain_rng(5, 0)
        n_draws = 6000
        out = np.array([draw(rng)[:, 0] for _ in range(n_draws)])
        se = np.sqrt(res.covariances[:, 0, 0] / n_draws)
        assert np.all(np.abs(out.mean(axis=0) - res.means[:, 0]) < 3 * se)
        np.testing.assert_allclose(out.var(axis=0), res.covariances[:, 0, 0], rtol=0.10)
        # lag-1 joint: Cov(x_i, x_i+1 | y) via the draws stays consistent
        assert abs(np.corrcoef(out[:, 2], out[:, 3])[0, 1]) > 0.1

    def test_multivariate_draws(self):
        spec = sp.ModelSpec(P=3, n=5, phi=[0.9, 0.5, 0.2], rho=0.3, obs=sp.GaussianObs(tau=0.5))
        _, y = sp.simulate(spec, 6)
        res = sp.kalman_smoother(spec, y)
        rng = sp.chain_rng(7, 0)
        draw = sp.ffbs_sampler(spec, y)
        out = np.array([draw(rng) for _ in range(4000)])
        se = np.sqrt(np.array([np.diag(c) for c in res.covariances]) / 4000)
        assert np.all(np.abs(out.mean(axis=0) - res.means) < 4 * se)


class TestGridPosterior:
    def test_requires_univariate(self):
        spec = sp.ModelSpec(P=2, n=3, phi=0.9, rho=0.3, obs=sp.AbsPoisson(sigma=0.8))
        with pytest.raises(ConfigError):
            sp.grid_hmm_posterior(spec, np.zeros((3, 2)))

    def test_pmf_rows_sum_to_one(self):
        spec = sp.ModelSpec(P=1, n=6, phi=0.9, rho=0.0, obs=sp.LogLinkPoisson(c=-0.4, sigma=0.6))
        _, y = sp.simulate(spec, 8)
        post = sp.grid_hmm_posterior(spec, y, points=800)
        np.testing.assert_allclose(post.pmf.sum(axis=1), 1.0, atol=1e-10)

    def test_constant_observation_returns_discretized_prior(self):
        spec = sp.ModelSpec(P=1, n=5, phi=0.9, rho=0.0, obs=sp.LogLinkPoisson(c=0.0, sigma=0.0))
        _, y = sp.simulate(spec, 9)
        post = sp.grid_hmm_posterior(spec, y, points=600)
        s = np.sqrt(spec.sigma_init[0, 0])
        prior = np.exp(-0.5 * (post.grid / s) ** 2)
        prior /= prior.sum()
        d = post.grid[None, :] - 0.9 * post.grid[:, None]
        T = np.exp(-0.5 * d * d)
        T /= T.sum(axis=1, keepdims=True)
        marg = prior.copy()
        for i in range(5):
            np.testing.assert_allclose(post.pmf[i], marg, atol=1e-6)
            marg = marg @ T

    def test_abs_poisson_marginals_symmetric(self):
        spec = sp.ModelSpec(P=1, n=6, phi=0.9, rho=0.0, obs=sp.AbsPoisson(sigma=0.8))
        _, y = sp.simulate(spec, 10)
        post = sp.grid_hmm_posterior(spec, y, points=1001)
        np.testing.assert_allclose(post.pmf, post.pmf[:, ::-1], atol=1e-6)
        np.testing.assert_allclose(post.mean(), 0.0, atol=1e-6)

    def test_grid_refinement_converges(self):
        spec = sp.ModelSpec(P=1, n=8, phi=0.9, rho=0.0, obs=sp.LogLinkPoisson(c=-0.4, sigma=0.6))
        _, y = sp.simulate(spec, 11)
        m1 = sp.grid_hmm_posterior(spec, y, points=1000).mean()
        m2 = sp.grid_hmm_posterior(spec, y, points=2000).mean()
        assert np.abs(m1 - m2).max() < 1e-3

    def test_narrow_grid_warns(self):
        spec = sp.ModelSpec(P=1, n=4, phi=0.9, rho=0.0, obs=sp.LogLinkPoisson(c=-0.4, sigma=0.6))
        _, y = sp.simulate(spec, 12)
        with pytest.warns(UserWarning, match="boundary"):
            sp.grid_hmm_posterior(spec, y, bounds=(-1.0, 1.0), points=200)

    def test_deterministic(self):
        spec = sp.ModelSpec(P=1, n=5, phi=0.9, rho=0.0, obs=sp.AbsPoisson(sigma=0.8))
        _, y = sp.simulate(spec, 13)
        a = sp.grid_hmm_posterior(spec, y, points=500)
        b = sp.grid_hmm_posterior(spec, y, points=500)
        assert np.array_equal(a.pmf, b.pmf)
