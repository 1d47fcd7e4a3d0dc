"""Latent VAR(1) Gaussian state-space models with Poisson or Gaussian observations.

The latent process is x_1 ~ N(0, Sigma_init), x_i | x_{i-1} ~ N(Phi x_{i-1}, Sigma)
with diagonal Phi = diag(phi_1..phi_P) and equicorrelated unit-variance innovation
covariance Sigma.  Three observation variants are supported:

* ``LogLinkPoisson``:  y_{i,j} ~ Poisson(exp(c_j + sigma_j * x_{i,j}))
* ``AbsPoisson``:      y_{i,j} ~ Poisson(sigma_j * |x_{i,j}|)
* ``GaussianObs``:     y_{i,j} ~ N(x_{i,j}, tau_j^2)   (exactly solvable; used by oracles)

All densities are computed and returned in log space.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.random import Generator, SeedSequence, default_rng
from scipy.special import gammaln

from .errors import ConfigError, ParameterError

LOG_2PI = float(np.log(2.0 * np.pi))


def chain_rng(master_seed: int, chain_index: int = 0) -> Generator:
    """Derive the RNG stream for one chain from a master seed.

    Stream-derivation rule: ``default_rng(SeedSequence(entropy=master_seed,
    spawn_key=(chain_index,)))``.  Distinct chain indices give statistically
    independent streams; the mapping is deterministic and stable across runs.
    """
    return default_rng(SeedSequence(entropy=master_seed, spawn_key=(chain_index,)))


@dataclass
class DensityCounter:
    """Running totals of density evaluations (one unit per (x_prev, x) or (x, y) pair)."""

    trans: int = 0
    obs: int = 0

    @property
    def total(self) -> int:
        return self.trans + self.obs

    def reset(self) -> None:
        self.trans = 0
        self.obs = 0


# ---------------------------------------------------------------------------
# Observation variants
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LogLinkPoisson:
    """Poisson observations with log-linear rate exp(c_j + sigma_j * x_j)."""

    c: np.ndarray
    sigma: np.ndarray

    tag = "log_link_poisson"


@dataclass(frozen=True)
class AbsPoisson:
    """Poisson observations with rate sigma_j * |x_j|.

    The density depends on x only through |x|, which makes the posterior
    invariant under global sign changes of the latent sequence.
    """

    sigma: np.ndarray

    tag = "abs_poisson"


@dataclass(frozen=True)
class GaussianObs:
    """Gaussian observations y_j ~ N(x_j, tau_j^2)."""

    tau: np.ndarray

    tag = "gaussian"


ObsModel = LogLinkPoisson | AbsPoisson | GaussianObs


def _as_vector(value, P: int, name: str) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.shape == (1,) and P > 1:
        arr = np.full(P, arr[0])
    if arr.shape != (P,):
        raise ParameterError(f"{name} must be a scalar or length-{P} vector, got shape {arr.shape}")
    return arr


def stationary_covariance(phi: np.ndarray, rho: float) -> np.ndarray:
    """Initial covariance of the latent process, by the closed form.

    Diagonal entries 1/(1 - phi_j^2); off-diagonal entries
    rho / (sqrt(1 - phi_j^2) * sqrt(1 - phi_k^2)).  This preserves the
    innovation correlation rho and equals the stationary covariance of the
    process exactly when all phi_j are equal or rho = 0.  Raises
    ParameterError if the result is not positive definite (rho out of range).
    """
    phi = np.asarray(phi, dtype=float)
    if np.any(np.abs(phi) >= 1.0):
        raise ParameterError("stationarity requires |phi_j| < 1 for all j")
    s = 1.0 / np.sqrt(1.0 - phi**2)
    cov = rho * np.outer(s, s)
    np.fill_diagonal(cov, s**2)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ParameterError(f"stationary covariance not positive definite (rho={rho})") from None
    return cov


@dataclass(eq=False)
class ModelSpec:
    """Full model specification with cached derived quantities.

    Treated as immutable after construction; safe to share across threads.
    The attached ``counter`` is mutable instrumentation (density-evaluation
    totals) and is the one exception: give each concurrent chain its own
    ModelSpec copy when counts matter.
    """

    P: int
    n: int
    phi: np.ndarray
    rho: float
    obs: ObsModel
    counter: DensityCounter = field(default_factory=DensityCounter)

    def __post_init__(self):
        if self.P < 1 or self.n < 1:
            raise ParameterError("P and n must be positive")
        self.phi = _as_vector(self.phi, self.P, "phi")
        self.rho = float(self.rho)
        if np.any(np.abs(self.phi) >= 1.0):
            raise ParameterError("stationarity requires |phi_j| < 1")
        if self.P > 1 and not (-1.0 / (self.P - 1) < self.rho < 1.0):
            raise ParameterError(
                f"rho must lie in (-1/(P-1), 1) = ({-1.0 / (self.P - 1):.4f}, 1) for P={self.P}"
            )
        if isinstance(self.obs, LogLinkPoisson):
            self.obs = LogLinkPoisson(
                c=_as_vector(self.obs.c, self.P, "c"),
                sigma=_as_vector(self.obs.sigma, self.P, "sigma"),
            )
        elif isinstance(self.obs, AbsPoisson):
            self.obs = AbsPoisson(sigma=_as_vector(self.obs.sigma, self.P, "sigma"))
        elif isinstance(self.obs, GaussianObs):
            self.obs = GaussianObs(tau=_as_vector(self.obs.tau, self.P, "tau"))
        else:
            raise ParameterError(f"unknown observation model {self.obs!r}")

        self.sigma = np.full((self.P, self.P), self.rho)
        np.fill_diagonal(self.sigma, 1.0)
        if self.P == 1:
            self.sigma = np.ones((1, 1))
        try:
            self.chol_sigma = np.linalg.cholesky(self.sigma)
        except np.linalg.LinAlgError:
            raise ParameterError(f"innovation covariance not positive definite (rho={self.rho})") from None
        self.sigma_init = stationary_covariance(self.phi, self.rho)
        self.chol_init = np.linalg.cholesky(self.sigma_init)
        # cached inverse factors: ||L^{-1} d||^2 computed as ||d @ inv_chol.T||^2
        eye = np.eye(self.P)
        self.inv_chol_sigma = np.linalg.solve(self.chol_sigma, eye)
        self.inv_chol_init = np.linalg.solve(self.chol_init, eye)
        self._lognorm_sigma = -0.5 * self.P * LOG_2PI - np.log(np.diag(self.chol_sigma)).sum()
        self._lognorm_init = -0.5 * self.P * LOG_2PI - np.log(np.diag(self.chol_init)).sum()

    # -- latent process ------------------------------------------------------

    @property
    def Phi(self) -> np.ndarray:
        return np.diag(self.phi)

    @property
    def is_time_reversible(self) -> bool:
        """True when the process run backward has the same law as run forward.

        Holds iff Phi commutes with Sigma_init (all phi_j equal, or rho = 0,
        or P = 1), which is also exactly when Sigma_init is the stationary
        covariance.  Required by the reversed-sequence update modes and by the
        backward pool-selection scheme.
        """
        m = self.phi[:, None] * self.sigma_init
        return bool(np.allclose(m, m.T, rtol=0.0, atol=1e-12))

    def log_init_density(self, x: np.ndarray) -> float:
        """Log density of N(0, Sigma_init) at x."""
        self.counter.trans += 1
        z = self.inv_chol_init @ x
        return self._lognorm_init - 0.5 * float(z @ z)

    def log_trans_density(self, x_prev: np.ndarray | None, x: np.ndarray) -> float:
        """Log transition density p(x | x_prev); x_prev=None gives the time-1 density."""
        if x_prev is None:
            return self.log_init_density(x)
        self.counter.trans += 1
        z = self.inv_chol_sigma @ (x - self.phi * x_prev)
        return self._lognorm_sigma - 0.5 * float(z @ z)

    def log_trans_from_many(self, x_prev_many: np.ndarray, x: np.ndarray) -> np.ndarray:
        """log p(x | x_prev_many[m]) for each of the m rows; shape (m,)."""
        self.counter.trans += x_prev_many.shape[0]
        d = x[None, :] - x_prev_many * self.phi[None, :]
        z = d @ self.inv_chol_sigma.T
        return self._lognorm_sigma - 0.5 * np.einsum("ij,ij->i", z, z)

    def log_trans_to_many(self, x_prev: np.ndarray, x_many: np.ndarray) -> np.ndarray:
        """log p(x_many[m] | x_prev) for each row; shape (m,)."""
        self.counter.trans += x_many.shape[0]
        d = x_many - (self.phi * x_prev)[None, :]
        z = d @ self.inv_chol_sigma.T
        return self._lognorm_sigma - 0.5 * np.einsum("ij,ij->i", z, z)

    def log_init_many(self, x_many: np.ndarray) -> np.ndarray:
        """log N(x_many[m]; 0, Sigma_init) for each row; shape (m,)."""
        self.counter.trans += x_many.shape[0]
        z = x_many @ self.inv_chol_init.T
        return self._lognorm_init - 0.5 * np.einsum("ij,ij->i", z, z)

    # -- observation process -------------------------------------------------

    def log_obs_density(self, x_i: np.ndarray, y_i: np.ndarray) -> float:
        """Exact log observation density sum_j log p(y_{i,j} | x_{i,j})."""
        self.counter.obs += 1
        return float(self._obs_ll(np.asarray(x_i, float)[None, :], np.asarray(y_i, float))[0])

    def log_obs_many(self, x_many: np.ndarray, y_i: np.ndarray) -> np.ndarray:
        """Log observation density of y_i under each row of x_many; shape (m,)."""
        self.counter.obs += x_many.shape[0]
        return self._obs_ll(x_many, np.asarray(y_i, float))

    def _obs_ll(self, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        obs = self.obs
        if isinstance(obs, LogLinkPoisson):
            eta = obs.c[None, :] + obs.sigma[None, :] * X
            return (y[None, :] * eta - np.exp(eta)).sum(axis=1) - gammaln(y + 1.0).sum()
        if isinstance(obs, AbsPoisson):
            rate = obs.sigma[None, :] * np.abs(X)
            out = -rate - gammaln(y + 1.0)[None, :]
            pos = y[None, :] > 0
            with np.errstate(divide="ignore"):
                lograte = np.log(rate, where=pos, out=np.zeros_like(rate))
            out = out + np.where(pos, y[None, :] * lograte, 0.0)
            # rate 0 with y > 0 has probability zero; rate 0 with y = 0 has probability 1
            out = np.where(pos & (rate == 0.0), -np.inf, out)
            return out.sum(axis=1)
        tau = obs.tau
        z = (y[None, :] - X) / tau[None, :]
        return -0.5 * (z * z).sum(axis=1) - np.log(tau).sum() - 0.5 * self.P * LOG_2PI

    def obs_loglik_fn(self, y_i: np.ndarray) -> Callable[[np.ndarray], float]:
        """Fast single-x observation log-likelihood closure for one time index.

        Per-time constants (gammaln terms) are hoisted out; each call counts
        as one observation-density evaluation.
        """
        counter = self.counter
        obs = self.obs
        y = np.asarray(y_i, dtype=float)
        if isinstance(obs, LogLinkPoisson):
            c, s = obs.c, obs.sigma
            const = -gammaln(y + 1.0).sum()

            def ll(x: np.ndarray) -> float:
                counter.obs += 1
                eta = c + s * x
                return float(y @ eta - np.exp(eta).sum()) + const

        elif isinstance(obs, AbsPoisson):
            s = obs.sigma
            const = -gammaln(y + 1.0).sum()
            ypos = y > 0
            any_pos = bool(ypos.any())

            def ll(x: np.ndarray) -> float:
                counter.obs += 1
                rate = s * np.abs(x)
                val = const - rate.sum()
                if any_pos:
                    rp = rate[ypos]
                    if np.any(rp == 0.0):
                        return -np.inf
                    val += float(y[ypos] @ np.log(rp))
                return val

        else:
            tau = obs.tau
            const = -np.log(tau).sum() - 0.5 * self.P * LOG_2PI

            def ll(x: np.ndarray) -> float:
                counter.obs += 1
                z = (y - x) / tau
                return const - 0.5 * float(z @ z)

        return ll


# ---------------------------------------------------------------------------
# Simulation and validation
# ---------------------------------------------------------------------------

def simulate(spec: ModelSpec, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Simulate one (latent, observed) sequence pair; deterministic given seed.

    Returns
    -------
    x : (n, P) float array, the latent path.
    y : (n, P) array; nonnegative integer-valued for the Poisson variants.
    """
    rng = default_rng(seed)
    n, P = spec.n, spec.P
    x = np.empty((n, P))
    x[0] = spec.chol_init @ rng.standard_normal(P)
    for i in range(1, n):
        x[i] = spec.phi * x[i - 1] + spec.chol_sigma @ rng.standard_normal(P)
    obs = spec.obs
    if isinstance(obs, LogLinkPoisson):
        y = rng.poisson(np.exp(obs.c[None, :] + obs.sigma[None, :] * x)).astype(float)
    elif isinstance(obs, AbsPoisson):
        y = rng.poisson(obs.sigma[None, :] * np.abs(x)).astype(float)
    else:
        y = x + obs.tau[None, :] * rng.standard_normal((n, P))
    return x, y


def validate_latent(spec: ModelSpec, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n, spec.P):
        raise ConfigError(f"latent sequence must have shape {(spec.n, spec.P)}, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ConfigError("latent sequence contains non-finite entries")
    return x


def validate_obs(spec: ModelSpec, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (spec.n, spec.P):
        raise ConfigError(f"observation sequence must have shape {(spec.n, spec.P)}, got {y.shape}")
    if isinstance(spec.obs, (LogLinkPoisson, AbsPoisson)):
        if np.any(y < 0) or not np.all(y == np.floor(y)):
            raise ConfigError("Poisson observations must be nonnegative integers")
    return y


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------
#
# Model file: YAML mapping with keys
#   variant: log_link_poisson | abs_poisson | gaussian
#   P, n: ints;  phi, rho: scalar or list;  c/sigma/tau per variant;  seed: int
#
# Dataset file: CSV with header "t,dim,x,y", one row per (time, dimension),
# both 1-based; floats written with %.17g so round-trips are bitwise exact.

def model_from_dict(cfg: dict) -> tuple[ModelSpec, int]:
    """Build (ModelSpec, simulation seed) from a parsed model-file mapping."""
    try:
        variant = str(cfg["variant"])
        P = int(cfg["P"])
        n = int(cfg["n"])
        phi = cfg["phi"]
        rho = float(cfg.get("rho", 0.0))
    except KeyError as e:
        raise ConfigError(f"model file missing required key {e}") from None
    if variant == "log_link_poisson":
        obs = LogLinkPoisson(c=_as_vector(cfg["c"], P, "c"), sigma=_as_vector(cfg["sigma"], P, "sigma"))
    elif variant == "abs_poisson":
        obs = AbsPoisson(sigma=_as_vector(cfg["sigma"], P, "sigma"))
    elif variant == "gaussian":
        obs = GaussianObs(tau=_as_vector(cfg["tau"], P, "tau"))
    else:
        raise ConfigError(f"unknown model variant {variant!r}")
    seed = int(cfg.get("seed", 0))
    return ModelSpec(P=P, n=n, phi=_as_vector(phi, P, "phi"), rho=rho, obs=obs), seed


def load_model_file(path) -> tuple[ModelSpec, int]:
    import yaml

    with open(path) as f:
        cfg = yaml.safe_load(f)
    if not isinstance(cfg, dict):
        raise ConfigError(f"model file {path} must contain a mapping")
    return model_from_dict(cfg)


def write_dataset(path, x: np.ndarray, y: np.ndarray) -> None:
    """Write a dataset CSV (header t,dim,x,y; t and dim 1-based)."""
    n, P = x.shape
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["t", "dim", "x", "y"])
    for i in range(n):
        for j in range(P):
            w.writerow([i + 1, j + 1, "%.17g" % x[i, j], "%.17g" % y[i, j]])
    with open(path, "w", newline="") as f:
        f.write(buf.getvalue())


def read_dataset(path, spec: ModelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Read a dataset CSV back into (x, y) arrays shaped (n, P)."""
    x = np.full((spec.n, spec.P), np.nan)
    y = np.full((spec.n, spec.P), np.nan)
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["t", "dim", "x", "y"]:
            raise ConfigError(f"dataset {path} has unexpected header {header}")
        for row in r:
            if not row:
                continue
            t, d = int(row[0]) - 1, int(row[1]) - 1
            if not (0 <= t < spec.n and 0 <= d < spec.P):
                raise ConfigError(f"dataset row (t={t + 1}, dim={d + 1}) outside model shape")
            x[t, d] = float(row[2])
            y[t, d] = float(row[3])
    if np.any(np.isnan(x)) or np.any(np.isnan(y)):
        raise ConfigError(f"dataset {path} is missing (t, dim) entries for the model shape")
    return x, validate_obs(spec, y)
