"""Final-quantity derivation: averaging, corrections, propagation.

The campaign reduces to one radiative decay rate. Per run, the closure
relation turns (detuning, rate difference, light shift) into a decay
rate; runs are combined by inverse-variance weighting; multiplicative
corrections from the budget ledger are applied once to the average; the
remaining quantities (sink rate, branching fraction, lifetime, dipole
matrix elements) follow by exact algebra with first-order uncertainty
propagation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .constants import PhysicalConstantsTable
from .errors import SignConsistencyError, ValidationError
from .inference.resonance import ResonanceFit
from .physics import closure_gamma_ps, matrix_element

DEFAULT_LEDGER = "paper_budget_ledger.csv"
LEDGER_HEADER = "label,shift_rel,unc_rel"

_EXACT_TOL = 1e-12


@dataclass(frozen=True)
class Uncertain:
    """A value with a 1-sigma standard uncertainty."""

    value: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.value) and math.isfinite(self.sigma) and self.sigma >= 0.0):
            raise ValidationError(f"bad uncertain value {self.value!r} +- {self.sigma!r}")

    @property
    def rel(self) -> float:
        """Relative uncertainty; requires a nonzero value."""
        if self.value == 0.0:
            raise ValidationError("relative uncertainty undefined for a zero value")
        return self.sigma / abs(self.value)

    def scaled(self, factor: float) -> "Uncertain":
        """Exact rescaling (unit changes); both moments scale together."""
        return Uncertain(self.value * factor, self.sigma * abs(factor))


def propagate_uncertainty(tag: str, **inputs) -> Uncertain:
    """First-order propagation through one tagged formula.

    Tags and their partial derivatives:

    product       x, y -> x*y;            rel out = hypot(rel x, rel y)
    quotient      x, y -> x/y;            rel out = hypot(rel x, rel y)
    power         x, exponent n -> x**n;  rel out = |n| * rel x
    closure       detuning, delta_r, stark -> 3*detuning*delta_r/stark;
                  rel out = rss of the three input rels (the formula is
                  a pure product/quotient in its inputs)
    branching     leak_b -> B = 1/(1 + b/3);       dB/db = -B^2/3
    lifetime      gamma_ps, leak_b -> 1/(gamma*(1 + b/3));
                  dtau/dgamma = -tau/gamma, dtau/db = -tau/(3 + b)
    sink_rate     gamma_ps, leak_b -> gamma*b/3;   product rule
    matrix_element gamma_ps, constants -> D(gamma) in e*a0 units;
                  dD/dgamma = D/(2*gamma), so rel out = rel gamma / 2
    quadrature    values (floats) -> sqrt(sum of squares), sigma 0
    """

    def need(*names):
        missing = [n for n in names if n not in inputs]
        extra = [n for n in inputs if n not in names]
        if missing or extra:
            raise ValidationError(f"tag {tag!r} takes inputs {names}, missing {missing}, extra {extra}")
        return [inputs[n] for n in names]

    if tag == "product" or tag == "quotient":
        x, y = need("x", "y")
        if y.value == 0.0 and tag == "quotient":
            raise ValidationError("division by an exactly zero value")
        value = x.value * y.value if tag == "product" else x.value / y.value
        return Uncertain(value, abs(value) * math.hypot(x.rel, y.rel))

    if tag == "power":
        x, exponent = need("x", "exponent")
        value = x.value**exponent
        return Uncertain(value, abs(value) * abs(exponent) * x.rel)

    if tag == "closure":
        detuning, delta_r, stark = need("detuning", "delta_r", "stark")
        value = closure_gamma_ps(detuning.value, delta_r.value, stark.value)
        rel = math.sqrt(detuning.rel**2 + delta_r.rel**2 + stark.rel**2)
        return Uncertain(value, value * rel)

    if tag == "branching":
        (leak_b,) = need("leak_b")
        value = 1.0 / (1.0 + leak_b.value / 3.0)
        return Uncertain(value, value**2 * leak_b.sigma / 3.0)

    if tag == "lifetime":
        gamma_ps, leak_b = need("gamma_ps", "leak_b")
        value = 1.0 / (gamma_ps.value * (1.0 + leak_b.value / 3.0))
        sigma = value * math.hypot(gamma_ps.rel, leak_b.sigma / (3.0 + leak_b.value))
        return Uncertain(value, sigma)

    if tag == "sink_rate":
        gamma_ps, leak_b = need("gamma_ps", "leak_b")
        value = gamma_ps.value * leak_b.value / 3.0
        sigma = math.hypot(leak_b.value * gamma_ps.sigma, gamma_ps.value * leak_b.sigma) / 3.0
        return Uncertain(value, sigma)

    if tag == "matrix_element":
        gamma_ps, constants = need("gamma_ps", "constants")
        value = matrix_element(gamma_ps.value, constants)
        return Uncertain(value, value * gamma_ps.rel / 2.0)

    if tag == "quadrature":
        (values,) = need("values")
        return Uncertain(math.sqrt(sum(float(v) ** 2 for v in values)), 0.0)

    raise ValidationError(f"unknown propagation tag {tag!r}")


def leak_from_branching(branching: Uncertain) -> Uncertain:
    """Invert B = 1/(1 + b/3); db/dB = -3/B^2."""
    if not (0.0 < branching.value <= 1.0):
        raise ValidationError(f"branching fraction must lie in (0, 1], got {branching.value!r}")
    value = 3.0 * (1.0 / branching.value - 1.0)
    return Uncertain(value, 3.0 * branching.sigma / branching.value**2)


@dataclass(frozen=True)
class LedgerRow:
    """One systematic effect: relative shift applied, relative uncertainty."""

    label: str
    shift_rel: float
    unc_rel: float

    def __post_init__(self):
        if not self.label or "," in self.label or "\n" in self.label:
            raise ValidationError(f"bad ledger label {self.label!r}")
        if not (math.isfinite(self.shift_rel) and math.isfinite(self.unc_rel) and self.unc_rel >= 0.0):
            raise ValidationError(f"ledger row {self.label!r} has non-finite or negative entries")


@dataclass(frozen=True)
class CorrectionLedger:
    """Ordered list of systematic corrections in absolute relative units."""

    rows: tuple[LedgerRow, ...]

    def __post_init__(self):
        rows = tuple(self.rows)
        labels = [row.label for row in rows]
        if len(set(labels)) != len(labels):
            raise ValidationError("ledger labels must be unique")
        object.__setattr__(self, "rows", rows)

    @property
    def total_shift_rel(self) -> float:
        """Signed sum of the relative shifts."""
        return math.fsum(row.shift_rel for row in self.rows)

    @property
    def total_unc_rel(self) -> float:
        """Quadrature sum of the relative uncertainties."""
        return math.sqrt(math.fsum(row.unc_rel**2 for row in self.rows))

    @classmethod
    def empty(cls) -> "CorrectionLedger":
        return cls(rows=())

    @classmethod
    def from_csv(cls, path: str | Path) -> "CorrectionLedger":
        return cls._parse(Path(path).read_text(), str(path))

    @classmethod
    def packaged_default(cls) -> "CorrectionLedger":
        text = resources.files("iondyne.data").joinpath(DEFAULT_LEDGER).read_text()
        return cls._parse(text, DEFAULT_LEDGER)

    @classmethod
    def _parse(cls, text: str, origin: str) -> "CorrectionLedger":
        lines = [line for line in text.splitlines() if line.strip()]
        if not lines or lines[0].strip() != LEDGER_HEADER:
            raise ValidationError(f"{origin}: ledger must start with header {LEDGER_HEADER!r}")
        rows = []
        for i, line in enumerate(lines[1:], start=2):
            parts = line.split(",")
            if len(parts) != 3:
                raise ValidationError(f"{origin}: line {i}: expected 3 fields")
            try:
                rows.append(LedgerRow(parts[0].strip(), float(parts[1]), float(parts[2])))
            except ValueError:
                raise ValidationError(f"{origin}: line {i}: bad numeric field") from None
        return cls(rows=tuple(rows))

    def to_csv(self, path: str | Path):
        lines = [LEDGER_HEADER]
        lines += [f"{row.label},{row.shift_rel!r},{row.unc_rel!r}" for row in self.rows]
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class FinalResults:
    """Derived physical quantities, mutually consistent by construction."""

    gamma_ps: Uncertain           # rad/s
    gamma_pd: Uncertain           # rad/s
    leak_b: Uncertain
    branching_fraction: Uncertain
    lifetime: Uncertain           # s
    d_reduced: Uncertain          # e * a0, lower fine-structure transition
    d_partner: Uncertain          # e * a0, sqrt(2) * d_reduced for the upper partner

    def __post_init__(self):
        b = self.leak_b.value
        if abs(self.branching_fraction.value - 1.0 / (1.0 + b / 3.0)) > _EXACT_TOL:
            raise ValidationError("branching_fraction inconsistent with leak_b")
        inverse = self.gamma_ps.value * (1.0 + b / 3.0)
        if abs(self.lifetime.value * inverse - 1.0) > _EXACT_TOL:
            raise ValidationError("lifetime inconsistent with gamma_ps and leak_b")
        if self.d_partner.value != math.sqrt(2.0) * self.d_reduced.value:
            raise ValidationError("d_partner must equal sqrt(2) * d_reduced exactly")

    @classmethod
    def from_gamma_and_b(
        cls, gamma_ps: Uncertain, leak_b: Uncertain, constants: PhysicalConstantsTable
    ) -> "FinalResults":
        d_reduced = propagate_uncertainty("matrix_element", gamma_ps=gamma_ps, constants=constants)
        return cls(
            gamma_ps=gamma_ps,
            gamma_pd=propagate_uncertainty("sink_rate", gamma_ps=gamma_ps, leak_b=leak_b),
            leak_b=leak_b,
            branching_fraction=propagate_uncertainty("branching", leak_b=leak_b),
            lifetime=propagate_uncertainty("lifetime", gamma_ps=gamma_ps, leak_b=leak_b),
            d_reduced=d_reduced,
            d_partner=d_reduced.scaled(math.sqrt(2.0)),
        )


@dataclass(frozen=True)
class RunEstimate:
    """Reduced measurements of one campaign run, as magnitudes."""

    run_index: int
    label: str
    optical_omega: float  # rad/s
    detuning_sign: int    # +1 above the resonance, -1 below
    delta_r: Uncertain    # 1/s
    stark: Uncertain      # rad/s
    leak_b: Uncertain
    converged: bool = True

    def __post_init__(self):
        if self.detuning_sign not in (-1, 1):
            raise ValidationError(f"detuning_sign must be +1 or -1, got {self.detuning_sign!r}")
        if self.delta_r.value <= 0.0 or self.stark.value <= 0.0:
            raise ValidationError("delta_r and stark enter as magnitudes and must be > 0")


@dataclass(frozen=True)
class RunGamma:
    """Per-run closure result, for the intermediate table."""

    run_index: int
    label: str
    detuning: float  # rad/s, signed
    gamma_ps: Uncertain


@dataclass(frozen=True)
class CampaignDerivation:
    """Everything derive produces: final values plus the audit trail."""

    final: FinalResults
    raw_gamma_ps: Uncertain        # inverse-variance average before corrections
    stat_rel: float                # statistical part of the relative uncertainty
    resonance_rel: float           # propagated zero-crossing contribution
    ledger: CorrectionLedger
    per_run: tuple[RunGamma, ...]
    resonance: ResonanceFit | None


def _combine(values: Sequence[Uncertain]) -> Uncertain:
    weights = [1.0 / u.sigma**2 for u in values]
    total = math.fsum(weights)
    mean = math.fsum(w * u.value for w, u in zip(weights, values)) / total
    return Uncertain(mean, math.sqrt(1.0 / total))


def derive_results(
    runs: Sequence[RunEstimate],
    resonance: ResonanceFit,
    ledger: CorrectionLedger,
    constants: PhysicalConstantsTable,
    allow_unconverged: bool = False,
) -> CampaignDerivation:
    """Reduce per-run estimates to the final physical quantities.

    Per run, the closure relation gives a decay rate with a relative
    uncertainty from its rate difference and light shift; the detuning
    uses the fitted resonance. Runs combine by inverse-variance
    weighting. The zero-crossing uncertainty is shared by every run, so
    it is propagated once against the weighted mean detuning response
    (conservatively, without exploiting red/blue cancellation) and added
    in quadrature alongside the ledger's total. The ledger's summed
    shift is then applied multiplicatively, exactly once.

    Unconverged runs are rejected unless ``allow_unconverged``; a fit
    that failed its convergence check is not silently averaged in.
    """
    runs = list(runs)
    if not runs:
        raise ValidationError("derive_results needs at least one run estimate")
    bad = [r.run_index for r in runs if not r.converged]
    if bad and not allow_unconverged:
        raise ValidationError(f"runs {bad} carry unconverged fits; pass allow_unconverged=True to override")

    per_run: list[RunGamma] = []
    sensitivities: list[float] = []  # d(gamma_i)/d(f_res) magnitudes
    for run in runs:
        detuning = resonance.detuning_of(run.optical_omega)
        if detuning == 0.0 or (1 if detuning > 0 else -1) != run.detuning_sign:
            raise SignConsistencyError(
                f"run {run.run_index} is labeled sign {run.detuning_sign:+d} but sits at "
                f"detuning {detuning:.4g} rad/s relative to the fitted resonance"
            )
        gamma = propagate_uncertainty(
            "closure",
            detuning=Uncertain(abs(detuning), 0.0),
            delta_r=run.delta_r,
            stark=run.stark,
        )
        per_run.append(RunGamma(run.run_index, run.label, detuning, gamma))
        sensitivities.append(gamma.value / abs(detuning))

    raw = _combine([rg.gamma_ps for rg in per_run])
    stat_rel = raw.rel

    weights = [1.0 / rg.gamma_ps.sigma**2 for rg in per_run]
    w_total = math.fsum(weights)
    mean_sensitivity = math.fsum(w * s for w, s in zip(weights, sensitivities)) / w_total
    resonance_rel = resonance.zero_crossing_sigma * mean_sensitivity / raw.value

    corrected_value = raw.value * (1.0 + ledger.total_shift_rel)
    total_rel = math.sqrt(stat_rel**2 + resonance_rel**2 + ledger.total_unc_rel**2)
    gamma_final = Uncertain(corrected_value, corrected_value * total_rel)

    leak_b = _combine([run.leak_b for run in runs])
    return CampaignDerivation(
        final=FinalResults.from_gamma_and_b(gamma_final, leak_b, constants),
        raw_gamma_ps=raw,
        stat_rel=stat_rel,
        resonance_rel=resonance_rel,
        ledger=ledger,
        per_run=tuple(per_run),
        resonance=resonance,
    )


def derive_from_values(
    gamma_ps: Uncertain,
    leak_b: Uncertain,
    ledger: CorrectionLedger,
    constants: PhysicalConstantsTable,
    apply_ledger: bool = True,
) -> CampaignDerivation:
    """Derivation chain starting from an already-measured decay rate.

    With ``apply_ledger`` the ledger shift multiplies the input value and
    its uncertainty total combines in quadrature with the input's; without
    it the inputs are taken as final (corrections already included) and
    the ledger is carried for reporting only.
    """
    if apply_ledger:
        value = gamma_ps.value * (1.0 + ledger.total_shift_rel)
        final = Uncertain(value, value * math.hypot(gamma_ps.rel, ledger.total_unc_rel))
    else:
        final = gamma_ps
    return CampaignDerivation(
        final=FinalResults.from_gamma_and_b(final, leak_b, constants),
        raw_gamma_ps=gamma_ps,
        stat_rel=gamma_ps.rel,
        resonance_rel=0.0,
        ledger=ledger,
        per_run=(),
        resonance=None,
    )
