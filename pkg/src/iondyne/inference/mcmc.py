"""Flip-scan posterior sampling with adaptive random-walk Metropolis.

The model ties a pair of scans (one per initial qubit state) to five
parameters: the two flip rates, the sink leak ratio, and the two
state-preparation-and-measurement (SPAM) coefficients of an affine map

    q(t) = dark_down + (dark_up - dark_down) * p_up(t),

fitted jointly as nuisances rather than assumed calibrated. The map
reads the observed dark fraction off the up population alone: the down
state and the sink are not distinguished by the readout. This is what
makes the leak ratio identifiable: the up-state trajectory's decay
scale carries (1+b) factors while the down-initialized amplitude
carries the bare r_plus, and their mismatch pins b.

The data constrain the dressed rates (1+b)*r_plus and (1+b)*r_minus
far more tightly than the leak ratio itself, so the walker moves in

    x = (log((1+b) r_plus), log((1+b) r_minus), log(1+b), dark_up, dark_down)

which turns that near-degeneracy into a single axis instead of a long
curved ridge through the natural parameters. Priors stay defined on
the natural parameters (log-uniform rates, uniform leak ratio and SPAM
coefficients); the Jacobian of the coordinate change is exp(x2) and is
applied inside the posterior, so the sampled distribution is exactly
the natural-parameter posterior. Proposal covariance adapts during
burn-in from the pooled recent history of all chains and is frozen
afterward, keeping the retained draws a valid Metropolis chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln

from ..dataset import ShotDataset
from ..dynamics import spin_populations
from ..errors import FitError, ValidationError
from ..rng import substream
from .estimate import PosteriorEstimate, central_interval_summary

# Reported parameter order; delta_r is derived from the sampled rates.
FLIP_PARAM_NAMES = ("r_plus", "r_minus", "leak_b", "dark_up", "dark_down", "delta_r")

_N_SAMPLED = 5  # dimensionality of the sampled vector
_CHAIN_STREAM_TAG = 1  # rng path component reserved for sampler chains


@dataclass(frozen=True)
class PriorConfig:
    """Prior support. Rates are log-uniform, the rest uniform."""

    rate_min: float = 1e-2          # 1/s
    rate_max: float = 1e6           # 1/s
    b_max: float = 2.0
    dark_up_bounds: tuple[float, float] = (0.0, 1.0)
    dark_down_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if not (0.0 < self.rate_min < self.rate_max):
            raise ValidationError("need 0 < rate_min < rate_max")
        if not self.b_max > 0.0:
            raise ValidationError("b_max must be > 0")
        for name in ("dark_up_bounds", "dark_down_bounds"):
            lo, hi = getattr(self, name)
            if not (0.0 <= lo < hi <= 1.0):
                raise ValidationError(f"{name} must satisfy 0 <= lo < hi <= 1, got {(lo, hi)!r}")


@dataclass(frozen=True)
class McmcSettings:
    """Sampler geometry. ``draws`` is the total retained across chains."""

    chains: int = 4
    burn_in: int = 5000
    draws: int = 20000
    adapt_interval: int = 50
    target_acceptance: float = 0.234
    rhat_threshold: float = 1.05

    def __post_init__(self):
        if self.chains < 2:
            raise ValidationError("need at least 2 chains for split-rhat diagnostics")
        if self.burn_in < 100 or self.draws < 100:
            raise ValidationError("burn_in and draws must each be at least 100")
        if self.draws % self.chains != 0:
            raise ValidationError(f"draws = {self.draws} must divide evenly over {self.chains} chains")
        if not (0.0 < self.target_acceptance < 1.0):
            raise ValidationError("target_acceptance must lie in (0, 1)")
        if self.rhat_threshold <= 1.0:
            raise ValidationError("rhat_threshold must exceed 1")

    @property
    def draws_per_chain(self) -> int:
        return self.draws // self.chains


class _FlipData:
    """Precomputed per-dataset arrays for fast batched likelihoods."""

    def __init__(self, dataset: ShotDataset):
        # Time-sorted so start heuristics and summaries cannot depend on
        # the row order of the file.
        order = np.argsort(dataset.durations_s, kind="stable")
        self.t = dataset.durations_s[order]
        self.n = dataset.shots[order].astype(float)
        self.k = dataset.dark_counts[order].astype(float)
        self.init = dataset.init
        # Binomial coefficient term; constant in the parameters.
        self.log_choose = float(np.sum(gammaln(self.n + 1) - gammaln(self.k + 1) - gammaln(self.n - self.k + 1)))


def _dark_probability(theta: np.ndarray, data: _FlipData) -> np.ndarray:
    """Model dark probability, shape (batch, n_durations)."""
    r_plus = theta[:, 0:1]
    r_minus = theta[:, 1:2]
    leak_b = theta[:, 2:3]
    p_up, _, _ = spin_populations(r_plus, r_minus, leak_b, data.t[None, :], data.init)
    dark_up = theta[:, 3:4]
    dark_down = theta[:, 4:5]
    q = dark_down + (dark_up - dark_down) * p_up
    return np.clip(q, 1e-300, 1.0 - 1e-16)


def _dataset_loglik(theta: np.ndarray, data: _FlipData) -> np.ndarray:
    q = _dark_probability(theta, data)
    return data.log_choose + np.sum(data.k * np.log(q) + (data.n - data.k) * np.log1p(-q), axis=1)


def flip_log_likelihood(theta, data_up: ShotDataset, data_down: ShotDataset):
    """Binomial log likelihood of a flip-scan pair.

    Parameters
    ----------
    theta : array-like, shape (5,) or (batch, 5)
        (r_plus, r_minus, leak_b, dark_up, dark_down) in natural units
        (rates in 1/s).
    data_up, data_down : ShotDataset
        The init-up and init-down scans of one run.

    Returns a float for a single parameter vector, else an array of
    shape (batch,).
    """
    if data_up.init != "up" or data_down.init != "down":
        raise ValidationError(
            f"expected an (up, down) dataset pair, got ({data_up.init!r}, {data_down.init!r})"
        )
    theta = np.asarray(theta, dtype=float)
    single = theta.ndim == 1
    theta = np.atleast_2d(theta)
    if theta.shape[1] != _N_SAMPLED:
        raise ValidationError(f"theta must have {_N_SAMPLED} columns, got {theta.shape[1]}")
    out = _dataset_loglik(theta, _FlipData(data_up)) + _dataset_loglik(theta, _FlipData(data_down))
    return float(out[0]) if single else out


def _support_mask(position: np.ndarray, priors: PriorConfig) -> np.ndarray:
    """True where the sampling-space position maps inside the prior box."""
    ln_lo, ln_hi = math.log(priors.rate_min), math.log(priors.rate_max)
    log_r_plus = position[:, 0] - position[:, 2]
    log_r_minus = position[:, 1] - position[:, 2]
    ok = (
        (log_r_plus >= ln_lo) & (log_r_plus <= ln_hi)
        & (log_r_minus >= ln_lo) & (log_r_minus <= ln_hi)
        & (position[:, 2] >= 0.0) & (position[:, 2] <= math.log1p(priors.b_max))
        & (position[:, 3] >= priors.dark_up_bounds[0]) & (position[:, 3] <= priors.dark_up_bounds[1])
        & (position[:, 4] >= priors.dark_down_bounds[0]) & (position[:, 4] <= priors.dark_down_bounds[1])
        & (position[:, 3] > position[:, 4])  # readout must order the qubit states
    )
    return ok


def _to_natural(position: np.ndarray) -> np.ndarray:
    """Sampling coordinates -> (r_plus, r_minus, leak_b, dark_up, dark_down)."""
    theta = position.copy()
    theta[:, 0] = np.exp(position[:, 0] - position[:, 2])
    theta[:, 1] = np.exp(position[:, 1] - position[:, 2])
    theta[:, 2] = np.expm1(position[:, 2])
    return theta


def _to_sampling(theta: np.ndarray) -> np.ndarray:
    """(r_plus, r_minus, leak_b, dark_up, dark_down) -> sampling coordinates."""
    position = np.asarray(theta, dtype=float).copy()
    ln_dress = np.log1p(theta[..., 2])
    position[..., 0] = np.log(theta[..., 0]) + ln_dress
    position[..., 1] = np.log(theta[..., 1]) + ln_dress
    position[..., 2] = ln_dress
    return position


def _log_posterior(position: np.ndarray, up: _FlipData, down: _FlipData, priors: PriorConfig) -> np.ndarray:
    out = np.full(position.shape[0], -np.inf)
    ok = _support_mask(position, priors)
    if np.any(ok):
        theta = _to_natural(position[ok])
        loglik = _dataset_loglik(theta, up) + _dataset_loglik(theta, down)
        # position[:, 2] is the log-Jacobian of the coordinate change, so
        # the priors keep their meaning on the natural parameters.
        out[ok] = loglik + position[ok, 2]
    return out


def _heuristic_start(up: _FlipData, down: _FlipData, priors: PriorConfig) -> np.ndarray:
    """Rough data-driven starting point in sampling space."""
    frac_up = up.k / up.n
    frac_down = down.k / down.n

    margin = 0.02
    dark_up0 = float(np.clip(frac_up.max(), priors.dark_up_bounds[0] + margin, priors.dark_up_bounds[1] - 1e-3))
    dark_down0 = float(
        np.clip(min(frac_up.min(), frac_down.min()), priors.dark_down_bounds[0] + 1e-3, dark_up0 - margin)
    )

    # The contrast between the two scans decays roughly like exp(-(r+ + r-) t).
    diff = np.abs(frac_up - frac_down)
    usable = diff > max(0.05 * float(diff.max()), 1e-3)
    if np.count_nonzero(usable) >= 3:
        slope = np.polyfit(up.t[usable], np.log(diff[usable]), 1)[0]
        rate_sum = max(-float(slope), 10.0 * priors.rate_min)
    else:
        rate_sum = 1.0 / max(float(up.t[-1]), 1e-9)
    rate_sum = float(np.clip(rate_sum, 2.0 * priors.rate_min, 2.0 * priors.rate_max))

    # Late-time dark level splits the sum between the two rates.
    contrast = max(dark_up0 - dark_down0, 0.05)
    q_late = 0.5 * (frac_up[-1] + frac_down[-1])
    share = float(np.clip((q_late - dark_down0) / contrast, 0.05, 0.95))
    r_plus0 = float(np.clip(share * rate_sum, priors.rate_min, priors.rate_max))
    r_minus0 = float(np.clip((1.0 - share) * rate_sum, priors.rate_min, priors.rate_max))

    b0 = min(0.1, 0.5 * priors.b_max)
    return _to_sampling(np.array([r_plus0, r_minus0, b0, dark_up0, dark_down0]))


def _refine_start(start: np.ndarray, up: _FlipData, down: _FlipData, priors: PriorConfig) -> np.ndarray:
    """Cheap mode hunt so chains start near the posterior bulk."""

    def negative(pos_row: np.ndarray) -> float:
        value = _log_posterior(pos_row[None, :], up, down, priors)[0]
        return -value if np.isfinite(value) else 1e30

    result = minimize(negative, start, method="Nelder-Mead", options={"maxiter": 600, "xatol": 1e-6, "fatol": 1e-6})
    candidate = result.x
    if np.isfinite(_log_posterior(candidate[None, :], up, down, priors))[0]:
        return candidate
    return start


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction for one parameter.

    chains has shape (n_chains, n_draws); each chain is split in half so
    within-chain drift shows up as between-chain variance.
    """
    n_chains, n_draws = chains.shape
    if n_draws < 4:
        raise ValidationError("need at least 4 draws per chain for split-rhat")
    half = n_draws // 2
    halves = np.concatenate([chains[:, :half], chains[:, half : 2 * half]], axis=0)
    means = halves.mean(axis=1)
    within = float(halves.var(axis=1, ddof=1).mean())
    between = half * float(means.var(ddof=1))
    if within == 0.0:
        return 1.0 if between == 0.0 else math.inf
    var_plus = (half - 1) / half * within + between / half
    return math.sqrt(var_plus / within)


def fit_flip_scan(
    data_up: ShotDataset,
    data_down: ShotDataset,
    priors: PriorConfig | None = None,
    settings: McmcSettings | None = None,
    seed: int = 0,
) -> PosteriorEstimate:
    """Sample the flip-rate posterior for one scan pair.

    Returns medians and central 68% intervals for the six sampled
    parameters plus the derived rate difference delta_r, with a
    split-rhat per parameter. A fit that fails the rhat threshold is
    still returned, flagged via ``converged=False``.

    Each chain owns the derived stream (seed, 1, chain_index) and all
    its randomness is drawn from that stream up front, so results are
    independent of chain scheduling.
    """
    if data_up.init != "up" or data_down.init != "down":
        raise ValidationError(
            f"expected an (up, down) dataset pair, got ({data_up.init!r}, {data_down.init!r})"
        )
    if not np.array_equal(np.sort(data_up.durations_s), np.sort(data_down.durations_s)):
        raise ValidationError("the up and down scans of a run must share one duration grid")
    label_up = data_up.metadata.get("detuning_label")
    label_down = data_down.metadata.get("detuning_label")
    if label_up != label_down:
        raise ValidationError(
            f"the up and down scans must come from one detuning, got {label_up!r} and {label_down!r}"
        )
    priors = priors or PriorConfig()
    settings = settings or McmcSettings()
    up, down = _FlipData(data_up), _FlipData(data_down)

    start = _refine_start(_heuristic_start(up, down, priors), up, down, priors)

    n_chains = settings.chains
    n_keep = settings.draws_per_chain
    n_steps = settings.burn_in + n_keep

    # Per-chain pre-drawn randomness: proposal normals, acceptance
    # uniforms, and the start jitter.
    normals = np.empty((n_chains, n_steps, _N_SAMPLED))
    uniforms = np.empty((n_chains, n_steps))
    position = np.empty((n_chains, _N_SAMPLED))
    jitter_scale = np.array([0.1, 0.1, 0.05, 0.01, 0.005])
    for c in range(n_chains):
        stream = substream(seed, _CHAIN_STREAM_TAG, c)
        normals[c] = stream.standard_normal((n_steps, _N_SAMPLED))
        uniforms[c] = stream.random(n_steps)
        for _ in range(100):
            candidate = start + jitter_scale * stream.standard_normal(_N_SAMPLED)
            if np.isfinite(_log_posterior(candidate[None, :], up, down, priors))[0]:
                position[c] = candidate
                break
        else:
            raise FitError("could not place a chain start inside the prior support")

    log_post = _log_posterior(position, up, down, priors)
    # Optimal random-walk scaling once the proposal shape matches the
    # posterior; start smaller while the shape is still a diagonal guess.
    base_scale = 2.38 / math.sqrt(_N_SAMPLED)
    base_log = np.full(n_chains, math.log(0.2 * base_scale))
    log_gain = np.zeros(n_chains)
    chol = np.diag(jitter_scale)

    history = np.empty((n_chains, n_steps, _N_SAMPLED))
    accepted_window = np.zeros(n_chains)
    accepted_retained = 0
    adapt_count = 0

    for step in range(n_steps):
        step_scale = np.exp(base_log + log_gain)
        jump = normals[:, step, :] @ chol.T * step_scale[:, None]
        proposal = position + jump
        log_post_prop = _log_posterior(proposal, up, down, priors)
        accept = np.log(uniforms[:, step]) < log_post_prop - log_post
        position[accept] = proposal[accept]
        log_post[accept] = log_post_prop[accept]
        history[:, step, :] = position
        accepted_window += accept
        if step >= settings.burn_in:
            accepted_retained += int(np.count_nonzero(accept))
            continue

        if (step + 1) % settings.adapt_interval == 0:
            adapt_count += 1
            rate = accepted_window / settings.adapt_interval
            accepted_window[:] = 0.0
            gain = min(0.5, 2.0 / math.sqrt(adapt_count))
            log_gain += gain * (rate - settings.target_acceptance)
            # Refit the proposal shape to the second half of burn-in so
            # far, pooled over chains so one stuck chain cannot poison
            # the estimate and every chain keeps the same kernel.
            lo = max((step + 1) // 2, 1)
            window = history[:, lo : step + 1, :]
            if window.shape[1] * n_chains >= 10 * _N_SAMPLED:
                pooled = window.reshape(-1, _N_SAMPLED)
                cov = np.cov(pooled.T) + 1e-12 * np.diag(jitter_scale**2)
                try:
                    chol = np.linalg.cholesky(cov)
                    base_log[:] = math.log(base_scale)
                except np.linalg.LinAlgError:
                    pass  # keep the previous shape; scale keeps adapting

    retained = history[:, settings.burn_in :, :]
    natural = _to_natural(retained.reshape(-1, _N_SAMPLED)).reshape(retained.shape)
    delta_r = natural[:, :, 1] - natural[:, :, 0]
    per_chain = np.concatenate([natural, delta_r[:, :, None]], axis=2)  # (C, n_keep, 7)

    medians, lows, highs, rhats = [], [], [], []
    for j in range(per_chain.shape[2]):
        med, lo, hi = central_interval_summary(per_chain[:, :, j].ravel())
        medians.append(med)
        lows.append(lo)
        highs.append(hi)
        rhats.append(split_rhat(per_chain[:, :, j]))
    rhats = np.array(rhats)
    converged = bool(np.all(np.isfinite(rhats)) and np.all(rhats <= settings.rhat_threshold))

    return PosteriorEstimate(
        params=FLIP_PARAM_NAMES,
        median=np.array(medians),
        ci68_lo=np.array(lows),
        ci68_hi=np.array(highs),
        rhat=rhats,
        acceptance_rate=accepted_retained / (n_chains * n_keep),
        converged=converged,
        samples=per_chain.reshape(-1, per_chain.shape[2]),
        metadata={"kind": "flip", "seed": str(seed), "chains": str(n_chains)},
    )
