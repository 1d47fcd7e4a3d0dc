"""Embedded-HMM MCMC with sequential pool-state selection for state-space models.

Samplers (embedded HMM with forward/reversed/backward pool schemes, the
independence-pool variant, particle Gibbs with backward sampling, and a
single-state Metropolis baseline) share a common latent VAR(1) model with
Poisson or Gaussian observations.  Exact oracles (Kalman/FFBS, grid HMM) and
FFT-based autocorrelation-time diagnostics support verification and sampler
comparison; the CLI front-end runs simulation, sampling schedules, and
diagnostics end to end.
"""

from .diagnostics import ActResult, DiagnosticsReport, act, act_per_variable, autocovariance_fft
from .ehmm import (
    EhmmConfig,
    EhmmStats,
    PoolSet,
    PoolState,
    ar_pool_step,
    backward_pass,
    build_pools,
    compute_alpha,
    compute_beta,
    ehmm_update,
    flip_step,
    forward_pass,
    generate_pool,
    independence_pool_update,
    init_link,
    kappa_backward_log,
    kappa_forward_log,
    shift_step,
)
from .errors import ConfigError, NumericalError, ParameterError
from .experiment import (
    ExperimentConfig,
    UpdateElement,
    diagnose,
    load_schedule_file,
    run_experiment,
    run_schedule,
)
from .metropolis import ConditionalMoments, MetropolisStats, conditional_moments, metropolis_sweep, metropolis_update
from .model import (
    AbsPoisson,
    DensityCounter,
    GaussianObs,
    LogLinkPoisson,
    ModelSpec,
    chain_rng,
    simulate,
    stationary_covariance,
)
from .oracle import GridPosterior, SmootherResult, ffbs_draw, ffbs_sampler, grid_hmm_posterior, kalman_smoother
from .pgbs import ParticleSystem, backward_sample, csmc, pgbs_update

__version__ = "0.1.0"

__all__ = [
    "AbsPoisson",
    "ActResult",
    "ConditionalMoments",
    "ConfigError",
    "DensityCounter",
    "DiagnosticsReport",
    "EhmmConfig",
    "EhmmStats",
    "ExperimentConfig",
    "GaussianObs",
    "GridPosterior",
    "LogLinkPoisson",
    "MetropolisStats",
    "ModelSpec",
    "NumericalError",
    "ParameterError",
    "ParticleSystem",
    "PoolSet",
    "PoolState",
    "SmootherResult",
    "UpdateElement",
    "act",
    "act_per_variable",
    "ar_pool_step",
    "autocovariance_fft",
    "backward_pass",
    "backward_sample",
    "build_pools",
    "chain_rng",
    "compute_alpha",
    "compute_beta",
    "conditional_moments",
    "csmc",
    "diagnose",
    "ehmm_update",
    "ffbs_draw",
    "ffbs_sampler",
    "flip_step",
    "forward_pass",
    "generate_pool",
    "grid_hmm_posterior",
    "independence_pool_update",
    "init_link",
    "kalman_smoother",
    "kappa_backward_log",
    "kappa_forward_log",
    "load_schedule_file",
    "metropolis_sweep",
    "metropolis_update",
    "pgbs_update",
    "run_experiment",
    "run_schedule",
    "shift_step",
    "simulate",
    "stationary_covariance",
]
