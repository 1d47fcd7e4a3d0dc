"""Embedded-HMM sampler with sequential pool-state selection.

Each update temporarily restricts the model to L "pool states" per time and
draws a new latent sequence exactly from the resulting finite HMM.  Pool
states are generated sequentially -- the pool at time i is sampled, by a short
Markov chain over (x, link) pairs, from a density conditioned on the adjacent
time's pool -- which makes the forward (alpha) or backward (beta) HMM
probabilities constant and brings the cost of a full update down to
Theta(n * L) density evaluations.

The pool chains combine three Metropolis moves: autoregressive updates of x
with the link held fixed, "shift" updates that move the link while translating
x so its residual relative to the linked state is preserved, and optional
"flip" updates that negate x (pairing each pool state with its mirror image),
which lets sign-symmetric multimodal posteriors be explored efficiently.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.random import Generator
from scipy.special import logsumexp

from .errors import ConfigError, NumericalError
from .model import ModelSpec


@dataclass(frozen=True)
class PoolState:
    """A pool entry: latent value plus, away from the boundary time, a link
    index (0-based) into the adjacent time's pool."""

    x: np.ndarray
    link: int | None = None


@dataclass
class PoolSet:
    """All pools of one update: states (n, L, P), links (n, L) with -1 where
    absent, and the position of the pre-update sequence in each pool."""

    states: np.ndarray
    links: np.ndarray
    current_index: np.ndarray
    direction: str
    flip_enabled: bool

    @property
    def L(self) -> int:
        return self.states.shape[1]

    def pool(self, i: int) -> list[PoolState]:
        return [
            PoolState(self.states[i, l].copy(), int(self.links[i, l]) if self.links[i, l] >= 0 else None)
            for l in range(self.L)
        ]


@dataclass
class EhmmConfig:
    """Tuning knobs for one embedded-HMM update."""

    L: int
    eps_range: tuple[float, float] = (0.1, 0.4)
    shift_window: int | None = None  # None: propose links uniformly over the pool
    flip_enabled: bool = False
    alternate_directions: bool = False  # honored by schedule runners

    def __post_init__(self):
        if self.L < 1:
            raise ConfigError("pool size L must be >= 1")
        lo, hi = self.eps_range
        if not (-1.0 <= lo <= hi <= 1.0):
            raise ConfigError("eps_range must satisfy -1 <= lo <= hi <= 1")
        if self.shift_window is not None and self.shift_window < 1:
            raise ConfigError("shift proposal window K must be >= 1")
        if self.flip_enabled and self.L % 2 != 0:
            raise ConfigError("flip updates require an even pool size L")


@dataclass
class EhmmStats:
    """Per-time proposal/acceptance counts, accumulated across updates."""

    n: int
    ar_proposed: np.ndarray = field(init=False)
    ar_accepted: np.ndarray = field(init=False)
    shift_proposed: np.ndarray = field(init=False)
    shift_accepted: np.ndarray = field(init=False)
    flip_proposed: np.ndarray = field(init=False)
    flip_accepted: np.ndarray = field(init=False)
    indep_proposed: np.ndarray = field(init=False)
    indep_accepted: np.ndarray = field(init=False)

    def __post_init__(self):
        for name in ("ar", "shift", "flip", "indep"):
            setattr(self, f"{name}_proposed", np.zeros(self.n, dtype=np.int64))
            setattr(self, f"{name}_accepted", np.zeros(self.n, dtype=np.int64))

    def rate(self, kind: str) -> np.ndarray:
        """Per-time acceptance rates; NaN where nothing was proposed."""
        prop = getattr(self, f"{kind}_proposed").astype(float)
        acc = getattr(self, f"{kind}_accepted").astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(prop > 0, acc / np.maximum(prop, 1), np.nan)

    def as_dict(self) -> dict:
        out = {}
        for kind in ("ar", "shift", "flip", "indep"):
            prop = getattr(self, f"{kind}_proposed")
            if prop.sum() == 0:
                continue
            out[kind] = {
                "proposed": prop.tolist(),
                "accepted": getattr(self, f"{kind}_accepted").tolist(),
            }
        return out


def _canon_direction(direction: str) -> str:
    d = direction.lower().replace("_", "-")
    aliases = {
        "forward": "forward",
        "reversed": "reversed",
        "reversed-sequence": "reversed",
        "backward": "backward",
        "backward-scheme": "backward",
    }
    if d not in aliases:
        raise ConfigError(f"unknown ehmm direction {direction!r}")
    return aliases[d]


def _sample_logits(logw: np.ndarray, rng: Generator) -> int:
    """Draw an index with probability proportional to exp(logw), stably."""
    m = logw.max()
    if not np.isfinite(m):
        raise NumericalError(f"degenerate selection weights: max log-weight {m}, weights {logw}")
    p = np.exp(logw - m)
    c = np.cumsum(p)
    return min(int(np.searchsorted(c, rng.random() * c[-1], side="right")), len(p) - 1)


# ---------------------------------------------------------------------------
# Building-block Metropolis moves
# ---------------------------------------------------------------------------

def ar_pool_step(
    target_mean: np.ndarray,
    target_chol: np.ndarray,
    loglik: Callable[[np.ndarray], float],
    x: np.ndarray,
    eps: float,
    rng: Generator,
    loglik_x: float | None = None,
) -> tuple[np.ndarray, float, bool]:
    """Autoregressive Metropolis step for a target N(mean, C C^T) * exp(loglik).

    Proposes w' = mu + sqrt(1 - eps^2) (w - mu) + eps * C z with z standard
    normal.  The proposal is reversible with respect to the Gaussian factor,
    so the move is accepted on the loglik ratio alone.  Returns
    (new x, loglik at new x, accepted).  eps = 0 is an exact null move and is
    always accepted; |eps| = 1 proposes an independent draw from the Gaussian.
    """
    if loglik_x is None:
        loglik_x = loglik(x)
    if eps == 0.0:
        return x, loglik_x, True
    z = rng.standard_normal(x.shape[0])
    x_prop = target_mean + np.sqrt(max(1.0 - eps * eps, 0.0)) * (x - target_mean) + eps * (target_chol @ z)
    ll_prop = loglik(x_prop)
    if ll_prop >= loglik_x or np.log(rng.random()) < ll_prop - loglik_x:
        return x_prop, ll_prop, True
    return x, loglik_x, False


def _propose_link(ell: int, L: int, window: int | None, rng: Generator) -> int:
    """Symmetric link proposal: uniform over the pool, or ell +/- k with
    k uniform on {1..K}.  Returns -1 for out-of-range windowed proposals
    (rejected outright)."""
    if window is None:
        return int(rng.integers(L))
    k = int(rng.integers(1, window + 1))
    if rng.random() < 0.5:
        k = -k
    ellp = ell + k
    return ellp if 0 <= ellp < L else -1


def _shift_move(x, ell, ll_x, means_prev, ll_fn, rng, window, L):
    """Joint (x, link) translation move; accepted on the observation ratio."""
    ellp = _propose_link(ell, L, window, rng)
    if ellp < 0:
        return x, ell, ll_x, False
    if ellp == ell:
        return x, ell, ll_x, True
    x_prop = x + (means_prev[ellp] - means_prev[ell])
    ll_prop = ll_fn(x_prop)
    if ll_prop >= ll_x or np.log(rng.random()) < ll_prop - ll_x:
        return x_prop, ellp, ll_prop, True
    return x, ell, ll_x, False


def _flip_move(x, ell, ll_x, prev_states, spec, ll_fn, rng):
    """Negate x and repoint the link to its mirror partner (low-bit toggle).

    Uses the full Metropolis ratio, which is exactly 1 when the observation
    density depends on |x| only and the adjacent pool is mirror-paired.
    """
    ellp = ell ^ 1
    x_prop = -x
    ll_prop = ll_fn(x_prop)
    logr = (ll_prop + spec.log_trans_density(prev_states[ellp], x_prop)) - (
        ll_x + spec.log_trans_density(prev_states[ell], x)
    )
    if logr >= 0.0 or np.log(rng.random()) < logr:
        return x_prop, ellp, ll_prop, True
    return x, ell, ll_x, False


def _flip_move_boundary(x, ll_x, spec, ll_fn, rng):
    """Flip move at the boundary time, against the stationary initial density."""
    x_prop = -x
    ll_prop = ll_fn(x_prop)
    logr = (ll_prop + spec.log_init_density(x_prop)) - (ll_x + spec.log_init_density(x))
    if logr >= 0.0 or np.log(rng.random()) < logr:
        return x_prop, ll_prop, True
    return x, ll_x, False


def shift_step(
    state: PoolState,
    pool_prev: np.ndarray,
    spec: ModelSpec,
    y_i: np.ndarray,
    rng: Generator,
    window: int | None = None,
) -> tuple[PoolState, bool]:
    """Public shift move on a PoolState given the (L, P) pool at the previous time."""
    if state.link is None:
        raise ConfigError("shift move needs a linked pool state (time >= 2)")
    means_prev = pool_prev * spec.phi[None, :]
    ll_fn = spec.obs_loglik_fn(y_i)
    x, ell, _, acc = _shift_move(
        state.x, state.link, ll_fn(state.x), means_prev, ll_fn, rng, window, pool_prev.shape[0]
    )
    return PoolState(x, ell), acc


def flip_step(
    state: PoolState,
    pool_prev: np.ndarray | None,
    spec: ModelSpec,
    y_i: np.ndarray,
    rng: Generator,
) -> tuple[PoolState, bool]:
    """Public flip move; pool_prev=None selects the boundary-time variant."""
    ll_fn = spec.obs_loglik_fn(y_i)
    if pool_prev is None:
        x, _, acc = _flip_move_boundary(state.x, ll_fn(state.x), spec, ll_fn, rng)
        return PoolState(x, None), acc
    if state.link is None:
        raise ConfigError("flip move at an interior time needs a linked pool state")
    x, ell, _, acc = _flip_move(state.x, state.link, ll_fn(state.x), pool_prev, spec, ll_fn, rng)
    return PoolState(x, ell), acc


def init_link(
    x_i: np.ndarray,
    pool_adjacent: np.ndarray,
    spec: ModelSpec,
    y_next: np.ndarray | None = None,
    rng: Generator | None = None,
    obs_log_adjacent: np.ndarray | None = None,
) -> int:
    """Stochastic link initialization for the current state's pool-chain start.

    Forward scheme (y_next=None): P(link = l) proportional to the transition
    density from the adjacent (previous-time) pool state l to x_i.  Backward
    scheme: proportional to obs(y_next | pool[l]) * trans(pool[l] | x_i), with
    pool_adjacent the next time's pool.  obs_log_adjacent, when given,
    replaces the per-pool-state observation terms (the backward scheme's
    boundary level importance-corrects them by the initial density).  Weights
    are normalized in log space with max subtraction.  Returns a 0-based index.
    """
    if obs_log_adjacent is not None:
        logw = obs_log_adjacent + spec.log_trans_to_many(x_i, pool_adjacent)
    elif y_next is None:
        logw = spec.log_trans_from_many(pool_adjacent, x_i)
    else:
        logw = spec.log_obs_many(pool_adjacent, y_next) + spec.log_trans_to_many(x_i, pool_adjacent)
    m = logw.max()
    if not np.isfinite(m):
        raise NumericalError(
            f"all link-initialization weights are zero (max log-weight {m}); log-weights: {logw}"
        )
    return _sample_logits(logw, rng)


# ---------------------------------------------------------------------------
# Pool generation
# ---------------------------------------------------------------------------

def _boundary_pool_forward(x_i, spec, config, ll_fn, rng, stats, i):
    """Pool at the first updated time: chain targets init-density * obs."""
    L, P = config.L, x_i.shape[0]
    xs = np.empty((L, P))
    l_i = int(rng.integers(L))
    xs[l_i] = x_i
    ll0 = ll_fn(x_i)
    zero = np.zeros(P)
    lo, hi = config.eps_range
    flip = config.flip_enabled
    ar_p, ar_a = stats.ar_proposed, stats.ar_accepted
    fl_p, fl_a = stats.flip_proposed, stats.flip_accepted
    for start, stop, step, off in ((l_i, L - 1, 1, 1), (l_i - 1, -1, -1, 0)):
        xc, llc = x_i, ll0
        for j in range(start, stop, step):
            if flip and (j & 1) == 0:
                fl_p[i] += 1
                xc, llc, acc = _flip_move_boundary(xc, llc, spec, ll_fn, rng)
                if acc:
                    fl_a[i] += 1
            else:
                ar_p[i] += 1
                xc, llc, acc = ar_pool_step(zero, spec.chol_init, ll_fn, xc, rng.uniform(lo, hi), rng, llc)
                if acc:
                    ar_a[i] += 1
            xs[j + off] = xc
    return xs, l_i


def _interior_pool_forward(x_i, ell0, prev_states, means_prev, spec, config, ll_fn, rng, stats, i):
    """Pool at an interior time of the forward scheme.

    The chain targets the joint density obs(y_i | x) * trans(x | prev[link]);
    a composite transition is one autoregressive move (link fixed) followed by
    one shift move, reversed order when generating below the current position.
    Flip transitions, when enabled, take every even-numbered edge.
    """
    L, P = config.L, x_i.shape[0]
    xs = np.empty((L, P))
    links = np.empty(L, dtype=np.int64)
    l_i = int(rng.integers(L))
    xs[l_i] = x_i
    links[l_i] = ell0
    ll0 = ll_fn(x_i)
    lo, hi = config.eps_range
    chol = spec.chol_sigma
    flip = config.flip_enabled
    window = config.shift_window
    ar_p, ar_a = stats.ar_proposed, stats.ar_accepted
    sh_p, sh_a = stats.shift_proposed, stats.shift_accepted
    fl_p, fl_a = stats.flip_proposed, stats.flip_accepted
    for start, stop, step, off, forward in ((l_i, L - 1, 1, 1, True), (l_i - 1, -1, -1, 0, False)):
        xc, ec, llc = x_i, ell0, ll0
        for j in range(start, stop, step):
            if flip and (j & 1) == 0:
                fl_p[i] += 1
                xc, ec, llc, acc = _flip_move(xc, ec, llc, prev_states, spec, ll_fn, rng)
                if acc:
                    fl_a[i] += 1
            elif forward:
                ar_p[i] += 1
                xc, llc, acc = ar_pool_step(means_prev[ec], chol, ll_fn, xc, rng.uniform(lo, hi), rng, llc)
                if acc:
                    ar_a[i] += 1
                sh_p[i] += 1
                xc, ec, llc, acc = _shift_move(xc, ec, llc, means_prev, ll_fn, rng, window, L)
                if acc:
                    sh_a[i] += 1
            else:
                # reversal of (autoregressive, then shift) is (shift, then autoregressive)
                sh_p[i] += 1
                xc, ec, llc, acc = _shift_move(xc, ec, llc, means_prev, ll_fn, rng, window, L)
                if acc:
                    sh_a[i] += 1
                ar_p[i] += 1
                xc, llc, acc = ar_pool_step(means_prev[ec], chol, ll_fn, xc, rng.uniform(lo, hi), rng, llc)
                if acc:
                    ar_a[i] += 1
            xs[j + off] = xc
            links[j + off] = ec
    return xs, links, l_i


def generate_pool(
    i: int,
    current: PoolState,
    pool_adjacent: np.ndarray | None,
    spec: ModelSpec,
    y_i: np.ndarray,
    config: EhmmConfig,
    rng: Generator,
    stats: EhmmStats | None = None,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Generate the forward-scheme pool at (0-based) time i around the current state.

    For i = 0 the chain targets init * obs and links are absent (-1).  For
    i >= 1, current.link must already be drawn by init_link.  Returns
    (states (L, P), links (L,), placed_index); position placed_index holds
    current.x exactly.
    """
    if stats is None:
        stats = EhmmStats(i + 1)
    ll_fn = spec.obs_loglik_fn(y_i)
    if i == 0:
        xs, l_i = _boundary_pool_forward(current.x, spec, config, ll_fn, rng, stats, i)
        return xs, np.full(config.L, -1, dtype=np.int64), l_i
    if current.link is None:
        raise ConfigError("interior pool generation requires an initialized link")
    if pool_adjacent is None:
        raise ConfigError("interior pool generation requires the previous time's pool")
    means_prev = pool_adjacent * spec.phi[None, :]
    return _interior_pool_forward(
        current.x, current.link, pool_adjacent, means_prev, spec, config, ll_fn, rng, stats, i
    )


def _boundary_pool_backward(x_n, spec, config, rng, stats, i):
    """Pool at time n for the backward scheme: the target is the stationary
    initial density, sampled exactly (independent refresh draws); flip edges
    negate and are always accepted by symmetry."""
    L, P = config.L, x_n.shape[0]
    xs = np.empty((L, P))
    l_i = int(rng.integers(L))
    xs[l_i] = x_n
    flip = config.flip_enabled
    fl_p, fl_a = stats.flip_proposed, stats.flip_accepted
    for start, stop, step, off in ((l_i, L - 1, 1, 1), (l_i - 1, -1, -1, 0)):
        xc = x_n
        for j in range(start, stop, step):
            if flip and (j & 1) == 0:
                fl_p[i] += 1
                fl_a[i] += 1
                xc = -xc
            else:
                xc = spec.chol_init @ rng.standard_normal(P)
            xs[j + off] = xc
    return xs, l_i


def _interior_pool_backward(x_i, ell0, next_states, spec, config, obs_next, rng, stats, i):
    """Pool at an interior time of the backward scheme.

    The chain targets obs(y_next | next[link]) * trans(next[link] | x).  With
    the link fixed the x-conditional is exactly Gaussian, so autoregressive
    moves always accept; shift moves translate x by Phi^{-1} times the change
    in linked next-state and accept on the (cached) next-observation ratio.
    """
    L, P = config.L, x_i.shape[0]
    xs = np.empty((L, P))
    links = np.empty(L, dtype=np.int64)
    l_i = int(rng.integers(L))
    xs[l_i] = x_i
    links[l_i] = ell0
    inv_phi = 1.0 / spec.phi
    inv_means = next_states * inv_phi[None, :]  # Phi^{-1} next[link]
    chol_g = inv_phi[:, None] * spec.chol_sigma  # factor of Phi^{-1} Sigma Phi^{-1}
    lo, hi = config.eps_range
    flip = config.flip_enabled
    window = config.shift_window
    ar_p, ar_a = stats.ar_proposed, stats.ar_accepted
    sh_p, sh_a = stats.shift_proposed, stats.shift_accepted
    fl_p, fl_a = stats.flip_proposed, stats.flip_accepted

    def ar(xc, ec):
        eps = rng.uniform(lo, hi)
        ar_p[i] += 1
        ar_a[i] += 1
        if eps == 0.0:
            return xc
        mean = inv_means[ec]
        return mean + np.sqrt(max(1.0 - eps * eps, 0.0)) * (xc - mean) + eps * (chol_g @ rng.standard_normal(P))

    def shift(xc, ec):
        ellp = _propose_link(ec, L, window, rng)
        sh_p[i] += 1
        if ellp < 0:
            return xc, ec
        if ellp == ec:
            sh_a[i] += 1
            return xc, ec
        logr = obs_next[ellp] - obs_next[ec]
        if logr >= 0.0 or np.log(rng.random()) < logr:
            sh_a[i] += 1
            return xc + (inv_means[ellp] - inv_means[ec]), ellp
        return xc, ec

    def flip_mv(xc, ec):
        ellp = ec ^ 1
        xp = -xc
        fl_p[i] += 1
        logr = (obs_next[ellp] + spec.log_trans_density(xp, next_states[ellp])) - (
            obs_next[ec] + spec.log_trans_density(xc, next_states[ec])
        )
        if logr >= 0.0 or np.log(rng.random()) < logr:
            fl_a[i] += 1
            return xp, ellp
        return xc, ec

    for start, stop, step, off, forward in ((l_i, L - 1, 1, 1, True), (l_i - 1, -1, -1, 0, False)):
        xc, ec = x_i, ell0
        for j in range(start, stop, step):
            if flip and (j & 1) == 0:
                xc, ec = flip_mv(xc, ec)
            elif forward:
                xc = ar(xc, ec)
                xc, ec = shift(xc, ec)
            else:
                xc, ec = shift(xc, ec)
                xc = ar(xc, ec)
            xs[j + off] = xc
            links[j + off] = ec
    return xs, links, l_i


def build_pools(
    x: np.ndarray,
    spec: ModelSpec,
    y: np.ndarray,
    config: EhmmConfig,
    direction: str = "forward",
    rng: Generator | None = None,
    stats: EhmmStats | None = None,
) -> PoolSet:
    """Sequentially generate all pools for one update.

    direction "forward" conditions each pool on the previous time's pool;
    "backward" starts at time n from the stationary density and conditions on
    the next time's pool; "reversed" builds forward-scheme pools for the
    time-reversed problem (states are stored in reversed-time order).
    """
    d = _canon_direction(direction)
    n, P = x.shape
    L = config.L
    if stats is None:
        stats = EhmmStats(n)
    states = np.empty((n, L, P))
    links = np.full((n, L), -1, dtype=np.int64)
    cur = np.empty(n, dtype=np.int64)
    if d == "reversed":
        _require_reversible(spec)
        x = np.ascontiguousarray(x[::-1])
        y = np.ascontiguousarray(y[::-1])
        d_build = "forward"
    else:
        d_build = d
    if d_build == "forward":
        ll_fn = spec.obs_loglik_fn(y[0])
        states[0], cur[0] = _boundary_pool_forward(x[0], spec, config, ll_fn, rng, stats, 0)
        for i in range(1, n):
            prev = states[i - 1]
            ell0 = init_link(x[i], prev, spec, None, rng)
            ll_fn = spec.obs_loglik_fn(y[i])
            means_prev = prev * spec.phi[None, :]
            states[i], links[i], cur[i] = _interior_pool_forward(
                x[i], ell0, prev, means_prev, spec, config, ll_fn, rng, stats, i
            )
    else:
        if np.any(spec.phi == 0.0):
            raise ConfigError("the backward scheme requires nonzero autoregressive coefficients")
        # the time-n pool is drawn from the initial density, which must also be
        # the marginal law of X_n; same predicate as time reversibility
        _require_reversible(spec)
        states[n - 1], cur[n - 1] = _boundary_pool_backward(x[n - 1], spec, config, rng, stats, n - 1)
        for i in range(n - 2, -1, -1):
            nxt = states[i + 1]
            obs_next = spec.log_obs_many(nxt, y[i + 1])
            if i == n - 2:
                # The time-n pool is drawn from the initial density rather
                # than from an observation-weighted density, so the level
                # conditioning on it importance-corrects its observation
                # weights by that density (the beta recursion seeded with
                # 1/kappa at time n).  Without this factor the update's
                # invariant law is the posterior tilted by the initial
                # density at the final time.
                obs_next = obs_next - spec.log_init_many(nxt)
            ell0 = init_link(x[i], nxt, spec, None, rng, obs_log_adjacent=obs_next)
            states[i], links[i], cur[i] = _interior_pool_backward(
                x[i], ell0, nxt, spec, config, obs_next, rng, stats, i
            )
    return PoolSet(states=states, links=links, current_index=cur, direction=d, flip_enabled=config.flip_enabled)


# ---------------------------------------------------------------------------
# HMM recursions and stochastic passes
# ---------------------------------------------------------------------------

def kappa_forward_log(pools: PoolSet, spec: ModelSpec, y: np.ndarray) -> np.ndarray:
    """Pointwise unnormalized log values of the forward sequential pool density
    on the generated pools: init*obs at time 1, obs * sum of transitions from
    the previous pool elsewhere.  Theta(n L^2); used by recursions and tests."""
    n, L, _ = pools.states.shape
    k = np.empty((n, L))
    s0 = pools.states[0]
    k[0] = spec.log_init_many(s0) + spec.log_obs_many(s0, y[0])
    for i in range(1, n):
        T = np.stack([spec.log_trans_from_many(pools.states[i - 1], pools.states[i][m]) for m in range(L)])
        k[i] = spec.log_obs_many(pools.states[i], y[i]) + logsumexp(T, axis=1)
    return k


def kappa_backward_log(pools: PoolSet, spec: ModelSpec, y: np.ndarray) -> np.ndarray:
    """Pointwise unnormalized log values of the backward sequential pool
    density: the stationary density at time n, and at earlier times the sum
    over the next pool of obs * transition.  Theta(n L^2)."""
    n, L, _ = pools.states.shape
    k = np.empty((n, L))
    k[n - 1] = spec.log_init_many(pools.states[n - 1])
    for i in range(n - 2, -1, -1):
        nxt = pools.states[i + 1]
        onext = spec.log_obs_many(nxt, y[i + 1])
        T = np.stack([spec.log_trans_to_many(pools.states[i][m], nxt) for m in range(L)])
        k[i] = logsumexp(T + onext[None, :], axis=1)
    return k


def compute_alpha(pools: PoolSet, spec: ModelSpec, y: np.ndarray, kappa_log: np.ndarray) -> np.ndarray:
    """Forward HMM log-probabilities over the pools, normalized per time
    (values are only needed up to a common additive constant)."""
    n, L, _ = pools.states.shape
    la = np.empty((n, L))
    s0 = pools.states[0]
    v = spec.log_init_many(s0) + spec.log_obs_many(s0, y[0]) - kappa_log[0]
    la[0] = v - (v.max() if np.isfinite(v.max()) else 0.0)
    for i in range(1, n):
        T = np.stack([spec.log_trans_from_many(pools.states[i - 1], pools.states[i][m]) for m in range(L)])
        s = logsumexp(T + la[i - 1][None, :], axis=1)
        v = spec.log_obs_many(pools.states[i], y[i]) - kappa_log[i] + s
        m = v.max()
        la[i] = v - (m if np.isfinite(m) else 0.0)
    return la


def compute_beta(pools: PoolSet, spec: ModelSpec, y: np.ndarray, kappa_log: np.ndarray) -> np.ndarray:
    """Backward HMM log-probabilities over the pools, normalized per time.

    beta at time n is identically 1; kappa at time n never enters.
    """
    n, L, _ = pools.states.shape
    lb = np.empty((n, L))
    lb[n - 1] = 0.0
    for i in range(n - 2, -1, -1):
        nxt = pools.states[i + 1]
        onext = spec.log_obs_many(nxt, y[i + 1])
        T = np.stack([spec.log_trans_to_many(pools.states[i][m], nxt) for m in range(L)])
        v = -kappa_log[i] + logsumexp(T + (onext + lb[i + 1])[None, :], axis=1)
        m = v.max()
        lb[i] = v - (m if np.isfinite(m) else 0.0)
    return lb


def backward_pass(pools: PoolSet, spec: ModelSpec, log_alpha: np.ndarray, rng: Generator) -> np.ndarray:
    """Select a new sequence backward in time: the time-n state proportional
    to alpha, earlier states proportional to alpha times the transition
    density into the already-selected successor."""
    states = pools.states
    n, L, P = states.shape
    out = np.empty((n, P))
    out[n - 1] = states[n - 1, _sample_logits(log_alpha[n - 1], rng)]
    for i in range(n - 2, -1, -1):
        logw = log_alpha[i] + spec.log_trans_from_many(states[i], out[i + 1])
        out[i] = states[i, _sample_logits(logw, rng)]
    return out


def forward_pass(
    pools: PoolSet, spec: ModelSpec, y: np.ndarray, log_beta: np.ndarray, rng: Generator
) -> np.ndarray:
    """Select a new sequence forward in time: the time-1 state proportional to
    beta * init * obs, later states proportional to beta * transition * obs."""
    states = pools.states
    n, L, P = states.shape
    out = np.empty((n, P))
    logw = log_beta[0] + spec.log_init_many(states[0]) + spec.log_obs_many(states[0], y[0])
    out[0] = states[0, _sample_logits(logw, rng)]
    for i in range(1, n):
        logw = log_beta[i] + spec.log_trans_to_many(out[i - 1], states[i]) + spec.log_obs_many(states[i], y[i])
        out[i] = states[i, _sample_logits(logw, rng)]
    return out


# ---------------------------------------------------------------------------
# Full updates
# ---------------------------------------------------------------------------

def _require_reversible(spec: ModelSpec) -> None:
    if not spec.is_time_reversible:
        raise ConfigError(
            "reversed-sequence updates need a time-reversible latent process "
            "(all phi equal, or rho = 0)"
        )


def ehmm_update(
    x: np.ndarray,
    spec: ModelSpec,
    y: np.ndarray,
    config: EhmmConfig,
    direction: str = "forward",
    rng: Generator | None = None,
    stats: EhmmStats | None = None,
) -> np.ndarray:
    """One full embedded-HMM update of the latent sequence.

    Pools are generated sequentially; because the pool densities make the
    forward (resp. backward) HMM probabilities constant, the new sequence is
    selected by a stochastic pass with those probabilities set to 1.  Total
    cost is Theta(n L) density evaluations.
    """
    d = _canon_direction(direction)
    if stats is None:
        stats = EhmmStats(x.shape[0])
    zeros = np.zeros((x.shape[0], config.L))
    if d == "reversed":
        pools = build_pools(x, spec, y, config, "reversed", rng, stats)
        out = backward_pass(pools, spec, zeros, rng)
        return np.ascontiguousarray(out[::-1])
    if d == "backward":
        pools = build_pools(x, spec, y, config, "backward", rng, stats)
        # beta is constant except at time n, where it is the reciprocal of the
        # pool density the boundary states were drawn from
        beta = zeros
        beta[-1] = -spec.log_init_many(pools.states[-1])
        return forward_pass(pools, spec, y, beta, rng)
    pools = build_pools(x, spec, y, config, "forward", rng, stats)
    return backward_pass(pools, spec, zeros, rng)


def independence_pool_update(
    x: np.ndarray,
    spec: ModelSpec,
    y: np.ndarray,
    L: int,
    rng: Generator,
    stats: EhmmStats | None = None,
) -> np.ndarray:
    """Forward-scheme embedded-HMM update whose pool chains use independence
    Metropolis: time-1 proposals from the initial density, later proposals
    drawing a uniform link and x from the transition density given the linked
    state, all accepted on the observation ratio.  Cost Theta(n L)."""
    n, P = x.shape
    if stats is None:
        stats = EhmmStats(n)
    states = np.empty((n, L, P))
    cur = np.empty(n, dtype=np.int64)
    in_p, in_a = stats.indep_proposed, stats.indep_accepted

    ll_fn = spec.obs_loglik_fn(y[0])
    l0 = int(rng.integers(L))
    states[0, l0] = x[0]
    ll0 = ll_fn(x[0])
    for start, stop, step, off in ((l0, L - 1, 1, 1), (l0 - 1, -1, -1, 0)):
        xc, llc = x[0], ll0
        for j in range(start, stop, step):
            in_p[0] += 1
            xp = spec.chol_init @ rng.standard_normal(P)
            llp = ll_fn(xp)
            if llp >= llc or np.log(rng.random()) < llp - llc:
                xc, llc = xp, llp
                in_a[0] += 1
            states[0, j + off] = xc
    cur[0] = l0

    for i in range(1, n):
        prev = states[i - 1]
        means_prev = prev * spec.phi[None, :]
        ell0 = init_link(x[i], prev, spec, None, rng)
        ll_fn = spec.obs_loglik_fn(y[i])
        l_i = int(rng.integers(L))
        states[i, l_i] = x[i]
        ll0 = ll_fn(x[i])
        for start, stop, step, off in ((l_i, L - 1, 1, 1), (l_i - 1, -1, -1, 0)):
            xc, ec, llc = x[i], ell0, ll0
            for j in range(start, stop, step):
                in_p[i] += 1
                ellp = int(rng.integers(L))
                xp = means_prev[ellp] + spec.chol_sigma @ rng.standard_normal(P)
                llp = ll_fn(xp)
                if llp >= llc or np.log(rng.random()) < llp - llc:
                    xc, ec, llc = xp, ellp, llp
                    in_a[i] += 1
                states[i, j + off] = xc
        cur[i] = l_i

    pools = PoolSet(
        states=states,
        links=np.full((n, L), -1, dtype=np.int64),
        current_index=cur,
        direction="forward",
        flip_enabled=False,
    )
    return backward_pass(pools, spec, np.zeros((n, L)), rng)
