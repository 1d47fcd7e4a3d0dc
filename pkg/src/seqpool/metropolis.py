"""Single-state Metropolis baseline.

Sweeps over times 1..n, updating all dimensions of each x_i at once with an
autoregressive proposal against the exact Gaussian full conditional of x_i
given its neighbours, accepted on the observation ratio.  The conditional
moments are obtained by generic Gaussian conditioning (well-defined even when
some phi_j = 0) and precomputed once per model.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator

from .ehmm import ar_pool_step
from .model import ModelSpec


@dataclass
class ConditionalMoments:
    """Precomputed full-conditional Gaussian moments for the latent chain.

    Time 1:      x_1 | x_2           ~ N(a1 @ x_2, cov1)
    Interior:    x_i | x_{i-1,i+1}   ~ N(a_prev @ x_{i-1} + a_next @ x_{i+1}, cov_mid)
    Time n:      x_n | x_{n-1}       ~ N(Phi x_{n-1}, Sigma)

    When Phi commutes with Sigma (all phi equal, or rho = 0), a_prev and
    a_next coincide and the interior mean reduces to a single matrix times
    (x_{i-1} + x_{i+1}).
    """

    a1: np.ndarray
    cov1: np.ndarray
    chol1: np.ndarray
    a_prev: np.ndarray
    a_next: np.ndarray
    cov_mid: np.ndarray
    chol_mid: np.ndarray


@dataclass
class MetropolisStats:
    """Per-time proposal/acceptance counts across sweeps."""

    n: int
    proposed: np.ndarray = field(init=False)
    accepted: np.ndarray = field(init=False)

    def __post_init__(self):
        self.proposed = np.zeros(self.n, dtype=np.int64)
        self.accepted = np.zeros(self.n, dtype=np.int64)

    def rate(self) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return np.where(self.proposed > 0, self.accepted / np.maximum(self.proposed, 1), np.nan)

    def as_dict(self) -> dict:
        return {"sweep": {"proposed": self.proposed.tolist(), "accepted": self.accepted.tolist()}}


def conditional_moments(spec: ModelSpec) -> ConditionalMoments:
    """Gaussian full-conditional moments of each x_i given its neighbours.

    Interior times combine the prior N(Phi x_{i-1}, Sigma) with the likelihood
    of x_{i+1}: precision Sigma^{-1} + Phi Sigma^{-1} Phi, linear terms
    Sigma^{-1} Phi x_{i-1} and Phi Sigma^{-1} x_{i+1}.  Time 1 conditions the
    stationary joint of (x_1, x_2) on x_2.
    """
    eye = np.eye(spec.P)
    phi = spec.phi
    sig_inv = np.linalg.solve(spec.sigma, eye)
    prec_mid = sig_inv + phi[:, None] * sig_inv * phi[None, :]
    cov_mid = np.linalg.solve(prec_mid, eye)
    cov_mid = 0.5 * (cov_mid + cov_mid.T)
    a_prev = cov_mid @ (sig_inv * phi[None, :])
    a_next = cov_mid @ (phi[:, None] * sig_inv)

    # condition the joint of (x_1, x_2) on x_2; Var(x_2) = Phi Sigma_init Phi + Sigma
    # (equal to Sigma_init only when the initial covariance is stationary)
    cross = spec.sigma_init * phi[None, :]  # Cov(x_1, x_2) = Sigma_init Phi
    var2 = phi[:, None] * spec.sigma_init * phi[None, :] + spec.sigma
    var2_inv = np.linalg.solve(var2, eye)
    a1 = cross @ var2_inv
    cov1 = spec.sigma_init - cross @ var2_inv @ cross.T
    cov1 = 0.5 * (cov1 + cov1.T)
    return ConditionalMoments(
        a1=a1,
        cov1=cov1,
        chol1=np.linalg.cholesky(cov1),
        a_prev=a_prev,
        a_next=a_next,
        cov_mid=cov_mid,
        chol_mid=np.linalg.cholesky(cov_mid),
    )


def metropolis_sweep(
    x: np.ndarray,
    spec: ModelSpec,
    y: np.ndarray,
    cm: ConditionalMoments,
    eps: float,
    rng: Generator,
    obs_ll: np.ndarray | None = None,
    ll_fns: list | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One Metropolis pass i = 1..n with proposal scale eps.

    Returns (updated sequence, per-time boolean acceptance flags).  obs_ll, if
    given, must hold the current observation log-likelihood per time and is
    updated in place (a neighbour's move never changes it).
    """
    n, P = x.shape
    x = x.copy()
    if ll_fns is None:
        ll_fns = [spec.obs_loglik_fn(y[i]) for i in range(n)]
    if obs_ll is None:
        obs_ll = np.array([ll_fns[i](x[i]) for i in range(n)])
    accepted = np.zeros(n, dtype=bool)
    for i in range(n):
        if n == 1:
            mean, chol = np.zeros(P), spec.chol_init
        elif i == 0:
            mean, chol = cm.a1 @ x[1], cm.chol1
        elif i == n - 1:
            mean, chol = spec.phi * x[i - 1], spec.chol_sigma
        else:
            mean, chol = cm.a_prev @ x[i - 1] + cm.a_next @ x[i + 1], cm.chol_mid
        xi, ll, acc = ar_pool_step(mean, chol, ll_fns[i], x[i], eps, rng, obs_ll[i])
        if acc:
            x[i] = xi
            obs_ll[i] = ll
            accepted[i] = True
    return x, accepted


def metropolis_update(
    x: np.ndarray,
    spec: ModelSpec,
    y: np.ndarray,
    cm: ConditionalMoments,
    eps_pair: tuple[float, float],
    reps: int,
    rng: Generator,
    parity: int = 0,
    stats: MetropolisStats | None = None,
) -> tuple[np.ndarray, int]:
    """reps sweeps, alternating the small/large proposal scale per sweep.

    parity selects which scale the first sweep uses and is returned advanced
    so alternation continues across calls.
    """
    n = x.shape[0]
    ll_fns = [spec.obs_loglik_fn(y[i]) for i in range(n)]
    obs_ll = np.array([ll_fns[i](x[i]) for i in range(n)])
    for _ in range(reps):
        eps = eps_pair[parity & 1]
        parity += 1
        x, accepted = metropolis_sweep(x, spec, y, cm, eps, rng, obs_ll, ll_fns)
        if stats is not None:
            stats.proposed += 1
            stats.accepted += accepted
    return x, parity
