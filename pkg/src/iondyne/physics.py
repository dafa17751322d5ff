"""Field/ion interaction kernel: dispersive shift, absorptive rates, closure.

Sign and unit conventions used everywhere in this package:

* detunings and rates named ``*_delta``, ``*_omega``, ``gamma_*`` or
  ``*_rad_s`` are angular (rad/s); plain-frequency values only appear at
  I/O boundaries with an explicit 2*pi conversion,
* detuning = drive frequency minus resonance frequency, red negative,
* polarization amplitudes are normalized so the squares sum to one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .constants import PhysicalConstantsTable
from .errors import DomainError, SignConsistencyError, ValidationError

TWO_PI = 2.0 * math.pi

# Tolerance on exact algebraic invariants (normalization, stored-vs-derived).
INVARIANT_TOL = 1e-12


@dataclass(frozen=True)
class LaserField:
    """One probe configuration: detuning, strength, polarization content."""

    detuning_delta: float  # rad/s, drive minus resonance (red < 0)
    rabi_omega: float      # rad/s
    eps_plus: float        # sigma+ amplitude, dimensionless
    eps_minus: float       # sigma- amplitude, dimensionless
    eps_pi: float          # pi amplitude, dimensionless

    def __post_init__(self):
        if not math.isfinite(self.detuning_delta):
            raise ValidationError(f"detuning_delta must be finite, got {self.detuning_delta!r}")
        if not (math.isfinite(self.rabi_omega) and self.rabi_omega >= 0.0):
            raise ValidationError(f"rabi_omega must be >= 0, got {self.rabi_omega!r}")
        for name in ("eps_plus", "eps_minus", "eps_pi"):
            amp = getattr(self, name)
            if not (math.isfinite(amp) and amp >= 0.0):
                raise ValidationError(f"{name} must be a non-negative amplitude, got {amp!r}")
        norm = self.eps_plus**2 + self.eps_minus**2 + self.eps_pi**2
        if abs(norm - 1.0) > INVARIANT_TOL:
            raise ValidationError(f"polarization amplitudes must satisfy sum(eps^2) = 1, got {norm!r}")

    @classmethod
    def from_intensity_fractions(
        cls,
        detuning_delta: float,
        rabi_omega: float,
        eps_plus_sq: float,
        eps_minus_sq: float,
        eps_pi_sq: float,
    ) -> "LaserField":
        """Build a field from squared amplitudes (intensity fractions)."""
        for name, frac in (("eps_plus_sq", eps_plus_sq), ("eps_minus_sq", eps_minus_sq), ("eps_pi_sq", eps_pi_sq)):
            if not (math.isfinite(frac) and frac >= 0.0):
                raise ValidationError(f"{name} must be >= 0, got {frac!r}")
        total = eps_plus_sq + eps_minus_sq + eps_pi_sq
        if abs(total - 1.0) > 1e-9:
            raise ValidationError(f"intensity fractions must sum to 1, got {total!r}")
        # Renormalize the rounding remainder so the amplitude invariant holds exactly.
        return cls(
            detuning_delta=detuning_delta,
            rabi_omega=rabi_omega,
            eps_plus=math.sqrt(eps_plus_sq / total),
            eps_minus=math.sqrt(eps_minus_sq / total),
            eps_pi=math.sqrt(eps_pi_sq / total),
        )

    def with_intensity_factor(self, factor: float) -> "LaserField":
        """Field with intensity (rabi_omega^2) scaled by ``factor``."""
        if not (math.isfinite(factor) and factor > 0.0):
            raise ValidationError(f"intensity factor must be > 0, got {factor!r}")
        return replace(self, rabi_omega=self.rabi_omega * math.sqrt(factor))


@dataclass(frozen=True)
class DecayConstants:
    """Excited-state decay channels: main radiative rate plus leak ratio."""

    gamma_ps: float  # rad/s, decay rate to the spin doublet
    gamma_pd: float  # rad/s, decay rate to the sink manifold
    leak_b: float    # dimensionless, 3 * gamma_pd / gamma_ps

    def __post_init__(self):
        if not (math.isfinite(self.gamma_ps) and self.gamma_ps > 0.0):
            raise ValidationError(f"gamma_ps must be > 0, got {self.gamma_ps!r}")
        if not (math.isfinite(self.gamma_pd) and self.gamma_pd >= 0.0):
            raise ValidationError(f"gamma_pd must be >= 0, got {self.gamma_pd!r}")
        derived = 3.0 * self.gamma_pd / self.gamma_ps
        if abs(self.leak_b - derived) > INVARIANT_TOL * max(1.0, abs(derived)):
            raise ValidationError(
                f"leak_b = {self.leak_b!r} inconsistent with 3 * gamma_pd / gamma_ps = {derived!r}"
            )

    @classmethod
    def from_rates(cls, gamma_ps: float, gamma_pd: float) -> "DecayConstants":
        return cls(gamma_ps=gamma_ps, gamma_pd=gamma_pd, leak_b=3.0 * gamma_pd / gamma_ps)

    @classmethod
    def from_branching(cls, gamma_ps: float, branching_fraction: float) -> "DecayConstants":
        """Build from the fraction of decays that land in the spin doublet."""
        if not (0.0 < branching_fraction <= 1.0):
            raise ValidationError(f"branching_fraction must be in (0, 1], got {branching_fraction!r}")
        leak_b = 3.0 * (1.0 / branching_fraction - 1.0)
        return cls(gamma_ps=gamma_ps, gamma_pd=leak_b * gamma_ps / 3.0, leak_b=leak_b)

    @property
    def branching_fraction(self) -> float:
        """Fraction of decays returning to the spin doublet, 1/(1 + b/3)."""
        return 1.0 / (1.0 + self.leak_b / 3.0)

    @property
    def lifetime(self) -> float:
        """Total excited-state lifetime in seconds, 1/(gamma_ps * (1 + b/3))."""
        return 1.0 / (self.gamma_ps * (1.0 + self.leak_b / 3.0))


@dataclass(frozen=True)
class RatePair:
    """Spin-flip scattering rates out of each qubit state (1/s)."""

    r_plus: float   # rate driven by the sigma+ / pi content acting on one spin state
    r_minus: float  # partner rate for the other spin state

    def __post_init__(self):
        for name in ("r_plus", "r_minus"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0.0):
                raise ValidationError(f"{name} must be >= 0, got {value!r}")

    @property
    def delta_r(self) -> float:
        """Rate difference r_minus - r_plus (1/s), the absorptive observable."""
        return self.r_minus - self.r_plus


def _require_off_resonant(field: LaserField):
    if field.detuning_delta == 0.0:
        raise DomainError("field is on resonance (detuning_delta = 0); dispersive/absorptive formulas diverge")


def stark_shift(field: LaserField) -> float:
    """Differential light shift between the qubit states, rad/s.

    Equals (1/3) * (rabi^2 / (4 * detuning)) * (eps_minus^2 - eps_plus^2);
    pi light shifts both states equally and drops out. The sign carries
    physical meaning: a sigma+ dominated red-detuned field gives a
    positive differential shift.
    """
    _require_off_resonant(field)
    imbalance = field.eps_minus**2 - field.eps_plus**2
    return (field.rabi_omega**2 / (4.0 * field.detuning_delta)) * imbalance / 3.0


def spin_flip_rates(field: LaserField, gamma_ps: float) -> RatePair:
    """Raman spin-flip rates (1/s) for the two qubit states.

    r_plus/r_minus = gamma_ps * (eps_+-^2 + eps_pi^2)/9 * rabi^2/(4 detuning^2),
    valid deep in the far-detuned, low-saturation regime.
    """
    _require_off_resonant(field)
    if not (math.isfinite(gamma_ps) and gamma_ps > 0.0):
        raise DomainError(f"gamma_ps must be > 0, got {gamma_ps!r}")
    saturation = field.rabi_omega**2 / (4.0 * field.detuning_delta**2)
    common = gamma_ps * saturation / 9.0
    return RatePair(
        r_plus=common * (field.eps_plus**2 + field.eps_pi**2),
        r_minus=common * (field.eps_minus**2 + field.eps_pi**2),
    )


def leak_rates(rates: RatePair, leak_b: float) -> tuple[float, float]:
    """Per-state leak rates into the sink manifold (1/s).

    Returns (up_to_sink, down_to_sink) = (b * r_minus, b * r_plus): each
    state leaks in proportion to its own total scattering, which is the
    partner rate of the Raman flip out of that state.
    """
    if not (math.isfinite(leak_b) and leak_b >= 0.0):
        raise DomainError(f"leak_b must be >= 0, got {leak_b!r}")
    return leak_b * rates.r_minus, leak_b * rates.r_plus


def closure_gamma_ps(detuning_delta: float, delta_r: float, stark: float) -> float:
    """Radiative decay rate from the closure relation, rad/s.

    gamma_ps = 3 * detuning * delta_r / stark. Polarization content and
    field strength cancel exactly between the dispersive and absorptive
    measurements, so only the detuning scale survives.
    """
    if stark == 0.0:
        raise DomainError("stark shift is zero; closure relation is undefined")
    if delta_r == 0.0:
        return 0.0
    gamma = 3.0 * detuning_delta * delta_r / stark
    if gamma < 0.0:
        raise SignConsistencyError(
            f"closure gave gamma_ps = {gamma!r} < 0; "
            "signs of detuning, delta_r and stark are mutually inconsistent"
        )
    return gamma


def matrix_element(gamma_ps: float, constants: PhysicalConstantsTable) -> float:
    """Reduced dipole matrix element implied by gamma_ps, in units of e * a0.

    Inverts the spontaneous-emission relation for a J' = 1/2 upper state:
    D^2 = 2 * gamma_ps * (3 * epsilon_0 * hbar / (8 * pi^2)) * lambda^3
    in SI, then divides by (e * a0). The J' = 3/2 partner element is
    sqrt(2) times this value (handled downstream).
    """
    if not (math.isfinite(gamma_ps) and gamma_ps > 0.0):
        raise DomainError(f"gamma_ps must be > 0, got {gamma_ps!r}")
    d_sq_si = (
        2.0
        * gamma_ps
        * (3.0 * constants.vacuum_permittivity * constants.hbar / (8.0 * math.pi**2))
        * constants.lambda_ps**3
    )
    atomic_unit = constants.elementary_charge * constants.bohr_radius
    return math.sqrt(d_sq_si) / atomic_unit
