"""Echo-fringe frequency extraction by weighted nonlinear least squares.

The oscillation frequency (the differential light shift magnitude) is
first located with a coarse zero-padded periodogram of the mean-removed
fractions, then the full fringe model is refined locally. Binomial shot
noise enters through a Gaussian approximation: per-point variance
q(1-q)/n with the q(1-q) factor floored at 1/(4n) so rows at 0 or n
dark counts keep a finite weight.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import least_squares

from ..dataset import ShotDataset
from ..errors import FitError, FrequencyAmbiguityError, ValidationError
from .estimate import PosteriorEstimate

ECHO_PARAM_NAMES = ("stark", "contrast", "offset", "phase", "decay_rate")

# Two periodogram peaks within this power ratio cannot be told apart.
_AMBIGUITY_RATIO = 0.9
_PAD_FACTOR = 8


def _point_sigmas(fractions: np.ndarray, shots: np.ndarray) -> np.ndarray:
    spread = np.maximum(fractions * (1.0 - fractions), 1.0 / (4.0 * shots))
    return np.sqrt(spread / shots)


def _periodogram_peak(t: np.ndarray, y: np.ndarray) -> float:
    """Best oscillation frequency (rad/s) from a coarse spectral scan."""
    centered = y - y.mean()
    spacing = np.diff(t)
    if np.allclose(spacing, spacing[0], rtol=1e-9, atol=0.0):
        spectrum = np.fft.rfft(centered, n=_PAD_FACTOR * t.size)
        freqs = 2.0 * math.pi * np.fft.rfftfreq(_PAD_FACTOR * t.size, d=float(spacing[0]))
    else:
        # Non-uniform grid: explicit scan of the same frequency range.
        span = float(t[-1] - t[0])
        nyquist = math.pi / float(np.min(spacing))
        freqs = np.linspace(0.0, nyquist, _PAD_FACTOR * t.size // 2 + 1)
        phases = np.exp(-1j * freqs[:, None] * t[None, :])
        spectrum = phases @ centered
    power = np.abs(spectrum) ** 2
    power[0] = 0.0  # the mean is not an oscillation

    if power.size < 3 or not np.any(power > 0.0):
        raise FitError("periodogram is flat; no oscillation to initialize from")
    interior = power[1:-1]
    is_peak = (interior >= power[:-2]) & (interior >= power[2:])
    peak_idx = np.flatnonzero(is_peak) + 1
    if peak_idx.size == 0:
        peak_idx = np.array([int(np.argmax(power))])
    order = np.argsort(power[peak_idx])[::-1]
    peak_idx = peak_idx[order]

    best = peak_idx[0]
    # Competing peaks must be genuinely distinct, not shoulder bins of
    # the main lobe (resolution is ~ pad_factor bins wide).
    rivals = [
        int(i) for i in peak_idx[1:]
        if power[i] >= _AMBIGUITY_RATIO * power[best] and abs(int(i) - int(best)) > _PAD_FACTOR
    ]
    if rivals:
        candidates = tuple(float(freqs[i]) for i in (best, *rivals))
        raise FrequencyAmbiguityError(
            f"periodogram peaks within {1 - _AMBIGUITY_RATIO:.0%} power of each other "
            f"at {[f'{f:.6g} rad/s' for f in candidates]}; extend or densify the scan",
            candidates_rad_s=candidates,
        )
    return float(freqs[best])


def fit_echo_scan(dataset: ShotDataset, min_periods: float = 3.0) -> PosteriorEstimate:
    """Fit offset + contrast * exp(-decay t) * cos(stark t + phase).

    Returns the five model parameters with 1-sigma intervals from the
    weighted-fit covariance; the sampler diagnostics fields are NaN.

    Raises FitError when fewer than ``min_periods`` oscillation periods
    fit in the scan window (the frequency would not be identifiable) and
    FrequencyAmbiguityError when the periodogram cannot pick a single
    peak.
    """
    if dataset.init != "echo":
        raise ValidationError(f"expected an echo dataset, got init {dataset.init!r}")
    # Time-sorted so the result cannot depend on the row order of the file.
    order = np.argsort(dataset.durations_s, kind="stable")
    t = dataset.durations_s[order]
    if t.size < 8:
        raise FitError(f"echo fit needs at least 8 grid points, got {t.size}")
    y = dataset.dark_fractions[order]
    sigma = _point_sigmas(y, dataset.shots[order])

    omega0 = _periodogram_peak(t, y)
    span = float(t[-1] - t[0])
    periods = omega0 * span / (2.0 * math.pi)
    if periods < min_periods:
        raise FitError(
            f"only {periods:.2f} oscillation periods in the {span:.3g} s window "
            f"(need {min_periods:g}); lengthen the scan to pin the frequency"
        )

    # Quadrature demodulation at the peak frequency for amplitude/phase.
    centered = y - y.mean()
    demod = np.sum(centered * np.exp(-1j * omega0 * t)) * 2.0 / t.size
    contrast0 = float(np.clip(np.abs(demod), 1e-3, 0.5))
    phase0 = float(np.angle(demod))
    offset0 = float(np.clip(y.mean(), 0.0, 1.0))
    x0 = np.array([omega0, contrast0, offset0, phase0, 0.1 / span])

    def residuals(x: np.ndarray) -> np.ndarray:
        model = x[2] + x[1] * np.exp(-x[4] * t) * np.cos(x[0] * t + x[3])
        return (model - y) / sigma

    bounds = (
        np.array([0.0, 0.0, 0.0, -2.0 * math.pi, 0.0]),
        np.array([np.inf, 0.5, 1.0, 2.0 * math.pi, np.inf]),
    )
    result = least_squares(residuals, x0, bounds=bounds, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15)
    if not np.all(np.isfinite(result.x)):
        raise FitError("echo fit diverged")

    point = result.x.copy()
    # Wrap the phase to (-pi, pi]; the model is 2pi-periodic in it.
    point[3] = math.remainder(point[3], 2.0 * math.pi)

    jac = result.jac
    gram = jac.T @ jac
    try:
        cov = np.linalg.inv(gram)
    except np.linalg.LinAlgError:
        cov = np.linalg.pinv(gram)
    widths = np.sqrt(np.clip(np.diag(cov), 0.0, np.inf))

    return PosteriorEstimate(
        params=ECHO_PARAM_NAMES,
        median=point,
        ci68_lo=point - widths,
        ci68_hi=point + widths,
        rhat=np.full(point.size, np.nan),
        acceptance_rate=math.nan,
        converged=bool(result.success),
        metadata={"kind": "echo", "periodogram_omega": repr(omega0)},
    )
