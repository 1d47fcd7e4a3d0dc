"""Autocorrelation-time estimation and run diagnostics.

The lag-k autocovariance estimator is the biased (1/n-normalized) sum
(1/n) * sum_{l=1}^{n-k} (x_l - xbar)(x_{l+k} - xbar) with an externally
supplied mean, computed via FFT.  Multi-run estimates drop a burn-in
fraction, center every run at the pooled mean, and average the per-run
autocovariances; tau = 1 + 2 * sum of truncated autocorrelations.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError


def autocovariance_fft(series: np.ndarray, mean: float, max_lag: int) -> np.ndarray:
    """Autocovariances gamma_0..gamma_max_lag about the supplied mean.

    FFT-based with zero padding to at least twice the series length, which
    reproduces the direct sum exactly up to roundoff.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n == 0:
        raise ConfigError("cannot compute autocovariances of an empty series")
    if max_lag >= n:
        raise ConfigError(f"max_lag {max_lag} must be below the series length {n}")
    xc = x - mean
    m = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conj(f), m)[: max_lag + 1]
    return acov / n


@dataclass
class ActResult:
    """Autocorrelation-time estimate with the audit trail of its truncation."""

    tau: float
    cutoff_lag: int
    rule: str
    threshold: float | None
    gamma0: float
    n_samples: int  # pooled post-burn-in sample count

    def as_dict(self) -> dict:
        return {
            "tau": self.tau,
            "cutoff_lag": self.cutoff_lag,
            "rule": self.rule,
            "threshold": self.threshold,
            "gamma0": self.gamma0,
            "n_samples": self.n_samples,
        }


def _avg_autocov(runs: list[np.ndarray], burn_in_frac: float, max_lag: int | None):
    if len(runs) == 0:
        raise ConfigError("at least one run is required")
    kept = []
    for r in runs:
        r = np.asarray(r, dtype=float).ravel()
        b = int(burn_in_frac * r.shape[0])
        kept.append(r[b:])
    min_len = min(k.shape[0] for k in kept)
    if min_len < 2:
        raise ConfigError("runs too short after burn-in removal")
    cap = max_lag if max_lag is not None else min_len - 1
    cap = min(cap, min_len - 1)
    pooled_mean = float(np.concatenate(kept).mean())
    acov = np.mean([autocovariance_fft(k, pooled_mean, cap) for k in kept], axis=0)
    total = sum(k.shape[0] for k in kept)
    return acov, pooled_mean, total, min_len


def act(
    runs: list[np.ndarray],
    burn_in_frac: float = 0.10,
    rule: str = "threshold",
    threshold: float = 0.01,
    max_lag: int | None = None,
) -> ActResult:
    """Estimate the autocorrelation time tau = 1 + 2 * sum of autocorrelations.

    Truncation rules:

    * ``threshold``: sum up to the smallest K with rho_K below the threshold
      (default 0.01), capped at a third of the shortest post-burn-in run.
    * ``initial-positive``: sum successive lag-pair autocorrelations while
      their sums stay positive (conservative for noisy tails).
    """
    acov, _, total, min_len = _avg_autocov(runs, burn_in_frac, max_lag)
    gamma0 = float(acov[0])
    if gamma0 <= 0.0:
        raise NumericalError("autocorrelation time undefined: zero variance (constant chains?)")
    rho = acov / gamma0
    cap = min(len(rho) - 1, max(1, min_len // 3))
    if rule == "threshold":
        below = np.nonzero(rho[1 : cap + 1] < threshold)[0]
        K = int(below[0]) + 1 if below.size else cap
        tau = 1.0 + 2.0 * float(rho[1 : K + 1].sum())
        return ActResult(tau, K, rule, threshold, gamma0, total)
    if rule == "initial-positive":
        # pair sums rho_{2m} + rho_{2m+1} stay positive for an AR-like chain
        npairs = (cap + 1) // 2
        s = 0.0
        K = 0
        for mdx in range(npairs):
            pair = rho[2 * mdx] + (rho[2 * mdx + 1] if 2 * mdx + 1 <= cap else 0.0)
            if pair <= 0.0:
                break
            s += pair
            K = min(2 * mdx + 1, cap)
        tau = 2.0 * s - 1.0
        return ActResult(tau, K, rule, None, gamma0, total)
    raise ConfigError(f"unknown act cutoff rule {rule!r}")


def act_per_variable(
    runs: list[np.ndarray],
    burn_in_frac: float = 0.10,
    rule: str = "threshold",
    threshold: float = 0.01,
    max_lag: int | None = None,
) -> np.ndarray:
    """tau per column for runs shaped (samples, variables); NaN for constant columns."""
    if len(runs) == 0:
        raise ConfigError("at least one run is required")
    nvar = runs[0].shape[1]
    for r in runs:
        if r.ndim != 2 or r.shape[1] != nvar:
            raise ConfigError("all runs must be 2-d with the same number of variables")
    taus = np.empty(nvar)
    for j in range(nvar):
        try:
            taus[j] = act([r[:, j] for r in runs], burn_in_frac, rule, threshold, max_lag).tau
        except NumericalError:
            taus[j] = np.nan
    return taus


@dataclass
class DiagnosticsReport:
    """Per-variable autocorrelation times plus run accounting.

    time-adjusted values are tau * secs_per_sample, the cross-sampler
    efficiency currency.
    """

    variables: list[str]
    act: np.ndarray
    secs_per_sample: float
    act_time_adjusted: np.ndarray = field(init=False)
    acceptance: dict = field(default_factory=dict)
    cost: dict = field(default_factory=dict)
    thinning: int = 1
    burn_in_frac: float = 0.10
    rule: str = "threshold"
    threshold: float | None = 0.01

    def __post_init__(self):
        self.act = np.asarray(self.act, dtype=float)
        self.act_time_adjusted = self.act * self.secs_per_sample

    def as_dict(self) -> dict:
        return {
            "variables": list(self.variables),
            "act": self.act.tolist(),
            "act_time_adjusted": self.act_time_adjusted.tolist(),
            "secs_per_sample": self.secs_per_sample,
            "acceptance": self.acceptance,
            "cost": self.cost,
            "thinning": self.thinning,
            "burn_in_frac": self.burn_in_frac,
            "cutoff_rule": self.rule,
            "cutoff_threshold": self.threshold,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.as_dict(), f, indent=2)

    def to_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write("variable,act,act_time_adjusted\n")
            for name, t, ta in zip(self.variables, self.act, self.act_time_adjusted):
                f.write(f"{name},{t!r},{ta!r}\n")
