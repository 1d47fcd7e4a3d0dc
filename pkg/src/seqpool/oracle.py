"""Exact-inference references used for testing and debugging.

For the Gaussian observation variant the posterior is exactly Gaussian:
``kalman_smoother`` returns marginal means/covariances and the data
log-likelihood, and ``ffbs_sampler`` draws exact joint posterior samples.
For one-dimensional latent processes with any observation variant,
``grid_hmm_posterior`` discretizes the state onto a fine grid and runs exact
finite-HMM forward-backward recursions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.random import Generator

from .errors import ConfigError, NumericalError
from .model import LOG_2PI, GaussianObs, ModelSpec


@dataclass
class SmootherResult:
    """Posterior marginal moments and data log-likelihood."""

    means: np.ndarray  # (n, P)
    covariances: np.ndarray  # (n, P, P)
    loglik: float


def _check_psd(c: np.ndarray, where: str) -> np.ndarray:
    c = 0.5 * (c + c.T)
    w = np.linalg.eigvalsh(c)
    if w.min() < -1e-8 * max(1.0, w.max()):
        raise NumericalError(f"covariance lost positive semi-definiteness in {where}: min eig {w.min():.3e}")
    return c


def _filter(spec: ModelSpec, y: np.ndarray):
    """Forward Kalman filter; returns filtered/predicted moments and loglik."""
    if not isinstance(spec.obs, GaussianObs):
        raise ConfigError("the Kalman oracle requires the Gaussian observation variant")
    n, P = spec.n, spec.P
    R = np.diag(spec.obs.tau**2)
    m_pred = np.empty((n, P))
    p_pred = np.empty((n, P, P))
    m_filt = np.empty((n, P))
    p_filt = np.empty((n, P, P))
    eye = np.eye(P)
    loglik = 0.0
    m, C = np.zeros(P), spec.sigma_init
    for i in range(n):
        if i > 0:
            m = spec.phi * m
            C = spec.phi[:, None] * C * spec.phi[None, :] + spec.sigma
        m_pred[i], p_pred[i] = m, C
        S = C + R
        chol_s = np.linalg.cholesky(S)
        resid = y[i] - m
        z = np.linalg.solve(chol_s, resid)
        loglik += -0.5 * (P * LOG_2PI + float(z @ z)) - np.log(np.diag(chol_s)).sum()
        K = np.linalg.solve(S.T, C.T).T  # C S^{-1}
        m = m + K @ resid
        ImK = eye - K
        C = _check_psd(ImK @ C @ ImK.T + K @ R @ K.T, f"filter update at time {i + 1}")
        m_filt[i], p_filt[i] = m, C
    return m_filt, p_filt, m_pred, p_pred, loglik


def kalman_smoother(spec: ModelSpec, y: np.ndarray) -> SmootherResult:
    """Exact posterior marginals for the Gaussian observation variant."""
    n = spec.n
    m_filt, p_filt, m_pred, p_pred, loglik = _filter(spec, y)
    means = np.empty_like(m_filt)
    covs = np.empty_like(p_filt)
    means[n - 1], covs[n - 1] = m_filt[n - 1], p_filt[n - 1]
    for i in range(n - 2, -1, -1):
        G = np.linalg.solve(p_pred[i + 1], (p_filt[i] * spec.phi[None, :]).T).T
        means[i] = m_filt[i] + G @ (means[i + 1] - m_pred[i + 1])
        covs[i] = _check_psd(
            p_filt[i] + G @ (covs[i + 1] - p_pred[i + 1]) @ G.T, f"smoother at time {i + 1}"
        )
    return SmootherResult(means=means, covariances=covs, loglik=loglik)


def ffbs_sampler(spec: ModelSpec, y: np.ndarray) -> Callable[[Generator], np.ndarray]:
    """Exact joint posterior sampler (forward filter, backward sampling).

    The per-time gains and conditional Cholesky factors are precomputed, so
    repeated draws cost n small matrix-vector products each.
    """
    n, P = spec.n, spec.P
    m_filt, p_filt, m_pred, p_pred, _ = _filter(spec, y)
    gains = np.empty((max(n - 1, 0), P, P))
    chols = np.empty((max(n - 1, 0), P, P))
    for i in range(n - 1):
        G = np.linalg.solve(p_pred[i + 1], (p_filt[i] * spec.phi[None, :]).T).T
        C = _check_psd(p_filt[i] - G @ p_pred[i + 1] @ G.T, f"sampler at time {i + 1}")
        gains[i] = G
        chols[i] = np.linalg.cholesky(C + 1e-14 * np.eye(P))
    chol_last = np.linalg.cholesky(p_filt[n - 1] + 1e-14 * np.eye(P))

    def draw(rng: Generator) -> np.ndarray:
        x = np.empty((n, P))
        x[n - 1] = m_filt[n - 1] + chol_last @ rng.standard_normal(P)
        for i in range(n - 2, -1, -1):
            mean = m_filt[i] + gains[i] @ (x[i + 1] - m_pred[i + 1])
            x[i] = mean + chols[i] @ rng.standard_normal(P)
        return x

    return draw


def ffbs_draw(spec: ModelSpec, y: np.ndarray, rng: Generator) -> np.ndarray:
    """One exact posterior draw (convenience wrapper around ffbs_sampler)."""
    return ffbs_sampler(spec, y)(rng)


@dataclass
class GridPosterior:
    """Discretized exact posterior for P = 1: per-time pmfs over a fixed grid."""

    grid: np.ndarray  # (M,)
    pmf: np.ndarray  # (n, M), each row sums to 1
    loglik: float

    def mean(self) -> np.ndarray:
        return self.pmf @ self.grid

    def var(self) -> np.ndarray:
        m = self.mean()
        return self.pmf @ self.grid**2 - m**2

    def mean_abs(self) -> np.ndarray:
        return self.pmf @ np.abs(self.grid)


def grid_hmm_posterior(
    spec: ModelSpec,
    y: np.ndarray,
    bounds: tuple[float, float] | None = None,
    points: int = 2000,
) -> GridPosterior:
    """Exact forward-backward posterior of the grid-discretized model (P = 1).

    The grid spans +/- 6 stationary standard deviations by default.  A warning
    is emitted when the posterior puts more than 1e-6 mass on the outermost
    grid cells (grid too narrow).  Deterministic.
    """
    if spec.P != 1:
        raise ConfigError("the grid oracle supports one-dimensional latent states only")
    s = float(np.sqrt(spec.sigma_init[0, 0]))
    lo, hi = bounds if bounds is not None else (-6.0 * s, 6.0 * s)
    grid = np.linspace(lo, hi, points)
    gcol = grid[:, None]

    prior = np.exp(-0.5 * (grid / s) ** 2)
    prior /= prior.sum()
    # row-normalized transition pmf: T[a, b] = P(move to cell b | cell a)
    d = grid[None, :] - spec.phi[0] * grid[:, None]
    T = np.exp(-0.5 * d * d)
    T /= T.sum(axis=1, keepdims=True)

    n = spec.n
    emit = np.empty((n, points))
    for i in range(n):
        emit[i] = np.exp(spec.log_obs_many(gcol, y[i]))

    alpha = np.empty((n, points))
    loglik = 0.0
    a = prior * emit[0]
    tot = a.sum()
    if tot <= 0.0:
        raise NumericalError("grid forward pass degenerated at time 1 (zero total mass)")
    loglik += np.log(tot)
    alpha[0] = a / tot
    for i in range(1, n):
        a = (alpha[i - 1] @ T) * emit[i]
        tot = a.sum()
        if tot <= 0.0:
            raise NumericalError(f"grid forward pass degenerated at time {i + 1} (zero total mass)")
        loglik += np.log(tot)
        alpha[i] = a / tot

    beta = np.empty((n, points))
    beta[n - 1] = 1.0
    for i in range(n - 2, -1, -1):
        b = T @ (emit[i + 1] * beta[i + 1])
        beta[i] = b / b.max()

    pmf = alpha * beta
    pmf /= pmf.sum(axis=1, keepdims=True)

    edge_mass = float((pmf[:, 0] + pmf[:, -1]).max())
    if edge_mass > 1e-6:
        warnings.warn(
            f"grid may be too narrow: up to {edge_mass:.3e} posterior mass on boundary cells",
            stacklevel=2,
        )
    return GridPosterior(grid=grid, pmf=pmf, loglik=loglik)
