"""Particle Gibbs with Backward Sampling.

Conditional SMC keeps the current path as particle 0 at every time and
propagates the remaining L-1 particles with the model transition as the
importance density, so the unnormalized weight of every particle reduces to
its observation density.  A backward selection pass then draws the new
sequence.  Cost is proportional to n * L.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import Generator

from .errors import ConfigError, NumericalError
from .ehmm import _sample_logits
from .model import ModelSpec


@dataclass
class ParticleSystem:
    """Particles (n, L, P), unnormalized log-weights and normalized weights
    (n, L), and ancestor indices (n-1, L) with index 0 the conditioned path."""

    particles: np.ndarray
    log_w: np.ndarray
    W: np.ndarray
    ancestors: np.ndarray

    def conditioned_path(self) -> np.ndarray:
        """Path through particle 0 at every time (ancestors of index 0 are 0)."""
        return self.particles[:, 0, :].copy()


def _normalize(log_w: np.ndarray, i: int) -> np.ndarray:
    m = log_w.max()
    if not np.isfinite(m):
        raise NumericalError(f"all particle weights are zero at time index {i}")
    w = np.exp(log_w - m)
    return w / w.sum()


def csmc(x: np.ndarray, spec: ModelSpec, y: np.ndarray, L: int, rng: Generator) -> ParticleSystem:
    """Conditional SMC with the model transition as importance density.

    Particle 0 at each time is the current x_i with ancestor 0; the other
    particles get multinomial ancestors drawn from the previous weights.
    """
    if L < 1:
        raise ConfigError("particle count L must be >= 1")
    n, P = x.shape
    particles = np.empty((n, L, P))
    log_w = np.empty((n, L))
    W = np.empty((n, L))
    ancestors = np.zeros((max(n - 1, 0), L), dtype=np.int64)

    particles[0, 0] = x[0]
    if L > 1:
        particles[0, 1:] = rng.standard_normal((L - 1, P)) @ spec.chol_init.T
    ll_fn = spec.obs_loglik_fn(y[0])
    log_w[0] = [ll_fn(particles[0, l]) for l in range(L)]
    W[0] = _normalize(log_w[0], 0)

    for i in range(1, n):
        if L > 1:
            anc = np.searchsorted(np.cumsum(W[i - 1]), rng.random(L - 1), side="right")
            anc = np.minimum(anc, L - 1)
            ancestors[i - 1, 1:] = anc
            src = particles[i - 1, anc]
            particles[i, 1:] = src * spec.phi[None, :] + rng.standard_normal((L - 1, P)) @ spec.chol_sigma.T
        particles[i, 0] = x[i]
        ll_fn = spec.obs_loglik_fn(y[i])
        log_w[i] = [ll_fn(particles[i, l]) for l in range(L)]
        W[i] = _normalize(log_w[i], i)
    return ParticleSystem(particles=particles, log_w=log_w, W=W, ancestors=ancestors)


def backward_sample(ps: ParticleSystem, spec: ModelSpec, rng: Generator) -> np.ndarray:
    """Backward selection pass: the time-n particle is drawn from the final
    weights, earlier particles with probability proportional to weight times
    the transition density into the already-selected successor."""
    n, L, P = ps.particles.shape
    out = np.empty((n, P))
    out[n - 1] = ps.particles[n - 1, _sample_logits(ps.log_w[n - 1], rng)]
    for i in range(n - 2, -1, -1):
        logw = ps.log_w[i] + spec.log_trans_from_many(ps.particles[i], out[i + 1])
        out[i] = ps.particles[i, _sample_logits(logw, rng)]
    return out


def pgbs_update(
    x: np.ndarray,
    spec: ModelSpec,
    y: np.ndarray,
    L: int,
    direction: str = "forward",
    rng: Generator | None = None,
) -> np.ndarray:
    """One particle-Gibbs-with-backward-sampling update.

    direction "reversed" runs the machinery on the time-reversed sequences
    (valid for the stationary, time-reversible latent process) and un-reverses
    the result.
    """
    d = direction.lower()
    if d in ("reversed", "reversed-sequence"):
        if not spec.is_time_reversible:
            raise ConfigError(
                "reversed-sequence updates need a time-reversible latent process "
                "(all phi equal, or rho = 0)"
            )
        xr = np.ascontiguousarray(x[::-1])
        yr = np.ascontiguousarray(y[::-1])
        out = backward_sample(csmc(xr, spec, yr, L, rng), spec, rng)
        return np.ascontiguousarray(out[::-1])
    if d != "forward":
        raise ConfigError(f"unknown pgbs direction {direction!r}")
    return backward_sample(csmc(x, spec, y, L, rng), spec, rng)
