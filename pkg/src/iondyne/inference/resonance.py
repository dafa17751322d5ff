"""Resonance-frequency regression from paired shift/rate measurements.

Each campaign run contributes one point: the ratio of its light-shift
magnitude to nine times its rate-difference magnitude, signed by which
side of the resonance the probe sat on. That ratio is proportional to
the detuning, so a weighted straight-line fit against the absolute
optical frequency crosses zero at the resonance. The factor nine in the
ordinate is a fixed convention making the fitted slope 1/(3 gamma_ps);
the zero crossing does not depend on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import FitError, ValidationError


@dataclass(frozen=True)
class ResonancePoint:
    """One run's contribution to the resonance regression."""

    optical_omega: float   # rad/s, absolute optical angular frequency
    stark: float           # rad/s, light-shift magnitude
    stark_sigma: float     # rad/s
    delta_r: float         # 1/s, rate-difference magnitude
    delta_r_sigma: float   # 1/s
    detuning_sign: int     # +1 above resonance, -1 below

    def __post_init__(self):
        if not all(
            math.isfinite(v)
            for v in (self.optical_omega, self.stark, self.stark_sigma, self.delta_r, self.delta_r_sigma)
        ):
            raise ValidationError("resonance point fields must be finite")
        if self.stark <= 0.0 or self.delta_r <= 0.0:
            raise ValidationError("stark and delta_r enter as magnitudes and must be > 0")
        if self.stark_sigma < 0.0 or self.delta_r_sigma < 0.0:
            raise ValidationError("uncertainties must be >= 0")
        if self.detuning_sign not in (-1, 1):
            raise ValidationError(f"detuning_sign must be +1 or -1, got {self.detuning_sign!r}")

    @property
    def ordinate(self) -> float:
        """sign(detuning) * stark / (9 * delta_r), dimension rad."""
        return self.detuning_sign * self.stark / (9.0 * self.delta_r)

    @property
    def ordinate_sigma(self) -> float:
        rel = math.hypot(
            self.stark_sigma / self.stark,
            self.delta_r_sigma / self.delta_r,
        )
        return abs(self.ordinate) * rel


@dataclass(frozen=True)
class ResonanceFit:
    """Weighted straight line through the regression points."""

    slope: float                  # per (rad/s) of optical frequency, equals 1/(3 gamma_ps)
    intercept: float              # ordinate extrapolated to zero optical frequency
    zero_crossing: float          # rad/s, the fitted resonance frequency
    zero_crossing_sigma: float    # rad/s
    n_points: int

    def __post_init__(self):
        if not (math.isfinite(self.zero_crossing) and math.isfinite(self.slope) and self.slope != 0.0):
            raise ValidationError("resonance fit must have a finite nonzero slope")
        if not (math.isfinite(self.zero_crossing_sigma) and self.zero_crossing_sigma > 0.0):
            raise ValidationError("zero-crossing uncertainty must be positive")

    def detuning_of(self, optical_omega: float) -> float:
        """Angular detuning of a probe at the given optical frequency."""
        return optical_omega - self.zero_crossing


def fit_resonance(points: Sequence[ResonancePoint]) -> ResonanceFit:
    """Weighted least-squares line through the run points.

    The abscissa is centered on its weighted mean before solving, so the
    fit is exactly equivariant under a common shift of all optical
    frequencies and stays well conditioned at optical magnitudes.

    Raises FitError for a singular design: fewer than two points, all
    points at one frequency, or a zero fitted slope.
    """
    points = list(points)
    if len(points) < 2:
        raise FitError(f"resonance regression needs at least 2 points, got {len(points)}")
    x = np.array([p.optical_omega for p in points])
    y = np.array([p.ordinate for p in points])
    sigma = np.array([p.ordinate_sigma for p in points])
    if np.any(sigma <= 0.0):
        raise ValidationError("every regression point needs a positive ordinate uncertainty")

    weights = 1.0 / sigma**2
    w_total = float(weights.sum())
    x_bar = float(np.sum(weights * x) / w_total)
    y_bar = float(np.sum(weights * y) / w_total)
    xc = x - x_bar
    s_xx = float(np.sum(weights * xc**2))
    if s_xx == 0.0:
        raise FitError("all regression points share one optical frequency; slope is undetermined")

    slope = float(np.sum(weights * xc * (y - y_bar)) / s_xx)
    if slope == 0.0:
        raise FitError("fitted slope is zero; zero crossing is undefined")

    # In centered coordinates the level (y_bar) and slope estimates are
    # uncorrelated: var(y_bar) = 1/sum(w), var(slope) = 1/s_xx.
    zero_crossing = x_bar - y_bar / slope
    var_zero = (1.0 / w_total) / slope**2 + (y_bar**2 / slope**4) / s_xx
    return ResonanceFit(
        slope=slope,
        intercept=y_bar - slope * x_bar,
        zero_crossing=zero_crossing,
        zero_crossing_sigma=math.sqrt(var_zero),
        n_points=len(points),
    )
