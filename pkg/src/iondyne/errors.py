"""Exception types shared across the package.

Validation errors subclass ValueError so callers that only know stdlib
semantics still catch them; everything derives from IondyneError so the
CLI can map any package failure onto a machine-readable error record.
"""

from __future__ import annotations


class IondyneError(Exception):
    """Base class for all package errors."""

    kind = "error"


class ValidationError(IondyneError, ValueError):
    """Bad input shape, range, or schema; raised before any work starts."""

    kind = "validation"


class ConfigError(ValidationError):
    """Config file missing, unparsable, or failing schema checks."""

    kind = "config"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DatasetFormatError(ValidationError):
    """Shot dataset file violates the on-disk format contract."""

    kind = "dataset-format"


class DomainError(IondyneError, ValueError):
    """Physically meaningless parameter combination (zero detuning, ...)."""

    kind = "domain"


class SignConsistencyError(DomainError):
    """Closure relation produced a negative decay rate: the signs of the
    supplied detuning, rate difference, and shift are mutually inconsistent."""

    kind = "sign-consistency"


class IntegrationError(IondyneError, RuntimeError):
    """Step-halving refinement failed to converge within the budget."""

    kind = "integration"

    def __init__(self, message: str, last: object = None, previous: object = None):
        super().__init__(message)
        self.last = last          # finest refinement reached
        self.previous = previous  # one refinement coarser


class FitError(IondyneError, RuntimeError):
    """Estimator could not produce a usable result from the data."""

    kind = "fit"


class FrequencyAmbiguityError(FitError):
    """Periodogram scan found competing oscillation frequencies."""

    kind = "frequency-ambiguity"

    def __init__(self, message: str, candidates_rad_s: tuple[float, ...] = ()):
        super().__init__(message)
        self.candidates_rad_s = tuple(candidates_rad_s)
