"""Conditional SMC, backward sampling, and the full PGBS update."""
import numpy as np
import pytest
from scipy.special import logsumexp

import seqpool as sp
from seqpool.errors import ConfigError, NumericalError


def gauss_spec(P=1, n=8, phi=0.9, rho=0.0, tau=0.7):
    return sp.ModelSpec(P=P, n=n, phi=phi, rho=rho, obs=sp.GaussianObs(tau=tau))


def ancestry_path(ps):
    """Reconstruct the path through particle 0 by following ancestors."""
    n = ps.particles.shape[0]
    out = np.empty((n, ps.particles.shape[2]))
    b = 0
    for i in range(n - 1, -1, -1):
        out[i] = ps.particles[i, b]
        if i > 0:
            b = ps.ancestors[i - 1, b]
    return out


class TestCsmc:
    def test_conditioned_path_survives(self):
        spec = sp.ModelSpec(P=2, n=9, phi=0.9, rho=0.4, obs=sp.LogLinkPoisson(c=-0.4, sigma=0.6))
        x, y = sp.simulate(spec, 1)
        ps = sp.csmc(x, spec, y, 6, sp.chain_rng(2, 0))
        assert np.array_equal(ps.conditioned_path(), x)
        assert np.array_equal(ancestry_path(ps), x)
        assert np.all(ps.ancestors[:, 0] == 0)

    def test_weights_normalized(self):
        spec = gauss_spec(P=2, rho=0.3)
        x, y = sp.simulate(spec, 3)
        ps = sp.csmc(x, spec, y, 5, sp.chain_rng(4, 0))
        np.testing.assert_allclose(ps.W.sum(axis=1), 1.0, atol=1e-12)

    def test_constant_observation_gives_uniform_weights(self):
        spec = sp.ModelSpec(P=1, n=7, phi=0.9, rho=0.0, obs=sp.LogLinkPoisson(c=0.0, sigma=0.0))
        x, y = sp.simulate(spec, 5)
        ps = sp.csmc(x, spec, y, 4, sp.chain_rng(6, 0))
        np.testing.assert_allclose(ps.W, 0.25, atol=1e-12)

    def test_single_particle_is_conditioned_path(self):
        spec = gauss_spec()
        x, y = sp.simulate(spec, 7)
        ps = sp.csmc(x, spec, y, 1, sp.chain_rng(8, 0))
        assert np.array_equal(ps.particles[:, 0, :], x)
        np.testing.assert_allclose(ps.W, 1.0)

    def test_weight_formula_reduces_to_observation_density(self):
        """With the transition as importance density the full weight formula
        collapses: trans and q cancel, leaving the observation density."""
        spec = sp.ModelSpec(P=2, n=5, phi=[0.9, 0.5], rho=0.4, obs=sp.LogLinkPoisson(c=-0.4, sigma=0.6))
        gen = np.random.default_rng(9)
        for _ in range(300):
            x_prev = gen.standard_normal(2)
            x_i = gen.standard_normal(2)
            y_i = gen.poisson(1.5, 2).astype(float)
            log_q = spec.log_trans_density(x_prev, x_i)
            full = spec.log_trans_density(x_prev, x_i) + spec.log_obs_density(x_i, y_i) - log_q
            assert abs(full - spec.log_obs_density(x_i, y_i)) < 1e-12

    def test_all_zero_weights_fatal_with_time_index(self):
        spec = sp.ModelSpec(P=1, n=4, phi=0.9, rho=0.0, obs=sp.LogLinkPoisson(c=800.0, sigma=0.0))
        x = np.zeros((4, 1))
        y = np.zeros((4, 1))
        with np.errstate(over="ignore"), pytest.raises(NumericalError, match="time index 0"):
            sp.csmc(x, spec, y, 3, sp.chain_rng(10, 0))

    def test_invalid_particle_count(self):
        spec = gauss_spec()
        x, y = sp.simulate(spec, 11)
        with pytest.raises(ConfigError):
            sp.csmc(x, spec, y, 0, sp.chain_rng(12, 0))


class TestBackwardSample:
    def test_single_particle_returns_conditioned_path(self):
        spec = gauss_spec()
        x, y = sp.simulate(spec, 13)
        ps = sp.csmc(x, spec, y, 1, sp.chain_rng(14, 0))
        out = sp.backward_sample(ps, spec, sp.chain_rng(15, 0))
        assert np.array_equal(out, x)

    def test_symmetric_two_particle_selection(self):
        """Equal weights and equal transition densities: each particle is
        chosen with probability 1/2 at both times."""
        spec = gauss_spec(P=1, n=2, phi=0.9)
        ps = sp.ParticleSystem(
            particles=np.array([[[1.0], [-1.0]], [[0.9], [-0.9]]]),
            log_w=np.zeros((2, 2)),
            W=np.full((2, 2), 0.5),
            ancestors=np.zeros((1, 2), dtype=np.int64),
        )
        rng = sp.chain_rng(16, 0)
        n_draws = 100000
        c1 = c2 = 0
        for _ in range(n_draws):
            out = sp.backward_sample(ps, spec, rng)
            c1 += out[0, 0] == 1.0
            c2 += out[1, 0] == 0.9
        se = 3 * 0.5 / np.sqrt(n_draws)
        assert abs(c1 / n_draws - 0.5) < se and abs(c2 / n_draws - 0.5) < se

    def test_matches_path_enumeration(self):
        """n=2, L=2 with unequal weights: empirical path frequencies match the
        exact enumeration of backward-sampling path probabilities."""
        spec = gauss_spec(P=1, n=2, phi=0.9)
        gen = np.random.default_rng(17)
        particles = gen.standard_normal((2, 2, 1))
        log_w = gen.standard_normal((2, 2))
        W = np.exp(log_w - logsumexp(log_w, axis=1, keepdims=True))
        ps = sp.ParticleSystem(
            particles=particles, log_w=log_w, W=W, ancestors=np.zeros((1, 2), dtype=np.int64)
        )
        probs = np.zeros((2, 2))
        for j in range(2):
            w = np.array(
                [
                    np.exp(log_w[0, m] + spec.log_trans_density(particles[0, m], particles[1, j]))
                    for m in range(2)
                ]
            )
            probs[:, j] = W[1, j] * w / w.sum()
        rng = sp.chain_rng(18, 0)
        counts = np.zeros((2, 2))
        n_draws = 100000
        for _ in range(n_draws):
            out = sp.backward_sample(ps, spec, rng)
            m = 0 if out[0, 0] == particles[0, 0, 0] else 1
            j = 0 if out[1, 0] == particles[1, 0, 0] else 1
            counts[m, j] += 1
        freq = counts / n_draws
        se = np.sqrt(probs * (1 - probs) / n_draws)
        assert np.all(np.abs(freq - probs) <= 3 * se + 1e-12)


class TestPgbsUpdate:
    def test_single_particle_identity(self):
        spec = sp.ModelSpec(P=2, n=7, phi=0.9, rho=0.4, obs=sp.LogLinkPoisson(c=-0.4, sigma=0.6))
        x, y = sp.simulate(spec, 19)
        for direction in ("forward", "reversed"):
            out = sp.pgbs_update(x, spec, y, 1, direction, sp.chain_rng(20, 0))
            assert np.array_equal(out, x)

    def test_reversed_requires_reversibility(self):
        spec = sp.ModelSpec(P=2, n=5, phi=[0.9, 0.5], rho=0.7, obs=sp.GaussianObs(tau=1.0))
        x, y = sp.simulate(spec, 21)
        with pytest.raises(ConfigError):
            sp.pgbs_update(x, spec, y, 3, "reversed", sp.chain_rng(22, 0))

    def test_unknown_direction(self):
        spec = gauss_spec()
        x, y = sp.simulate(spec, 23)
        with pytest.raises(ConfigError):
            sp.pgbs_update(x, spec, y, 3, "diagonal", sp.chain_rng(24, 0))

    def test_counters_linear_in_particle_count(self):
        spec = sp.ModelSpec(P=2, n=10, phi=0.9, rho=0.4, obs=sp.LogLinkPoisson(c=-0.4, sigma=0.6))
        x, y = sp.simulate(spec, 25)
        counts = {}
        for L in (8, 16):
            spec.counter.reset()
            sp.pgbs_update(x, spec, y, L, "forward", sp.chain_rng(26, 0))
            counts[L] = spec.counter.total
        assert counts[16] <= 2.2 * counts[8]

    @pytest.mark.parametrize("direction", ["forward", "reversed"])
    def test_matches_kalman_smoother(self, direction):
        spec = gauss_spec(P=1, n=10, tau=0.7)
        x_true, y = sp.simulate(spec, 27)
        sm = sp.kalman_smoother(spec, y)
        rng = sp.chain_rng(28, 0)
        x = np.zeros((10, 1))
        n_iter = 8000
        out = np.empty((n_iter, 10))
        for k in range(n_iter):
            x = sp.pgbs_update(x, spec, y, 25, direction, rng)
            out[k] = x[:, 0]
        kept = out[n_iter // 10 :]
        taus = sp.act_per_variable([kept], rule="initial-positive")
        se = np.sqrt(kept.var(axis=0) * taus / kept.shape[0])
        assert np.all(np.abs(kept.mean(axis=0) - sm.means[:, 0]) < 3 * se)
        np.testing.assert_allclose(kept.var(axis=0), sm.covariances[:, 0, 0], rtol=0.10)
