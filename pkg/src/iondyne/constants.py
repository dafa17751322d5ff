"""Physical constants, loaded from a versioned table file.

Numeric values never live in code: everything comes from one packaged
text file (format ``name = value  # unit`` per line) so a constants bump
is a data change with a version header, not a source edit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from importlib import resources
from pathlib import Path

from .errors import ValidationError

FORMAT_HEADER = "# iondyne-constants v1"
DEFAULT_TABLE = "constants_codata2018.txt"


@dataclass(frozen=True)
class PhysicalConstantsTable:
    """Immutable bundle of the constants the derivation chain needs (SI)."""

    hbar: float                 # J s
    vacuum_permittivity: float  # F / m
    elementary_charge: float    # C
    bohr_radius: float          # m
    speed_of_light: float       # m / s
    lambda_ps: float            # m, probe transition wavelength

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, float) and math.isfinite(value) and value > 0.0):
                raise ValidationError(f"constant {f.name} must be a positive finite float, got {value!r}")

    def with_wavelength(self, lambda_ps: float) -> "PhysicalConstantsTable":
        """Copy of the table with the probe wavelength overridden (meters)."""
        return replace(self, lambda_ps=float(lambda_ps))


def _parse_line(raw: str, lineno: int) -> tuple[str, float] | None:
    line = raw.split("#", 1)[0].strip()
    if not line:
        return None
    if "=" not in line:
        raise ValidationError(f"constants table line {lineno}: expected 'name = value', got {raw.rstrip()!r}")
    name, _, text = line.partition("=")
    name = name.strip()
    try:
        value = float(text.strip())
    except ValueError:
        raise ValidationError(f"constants table line {lineno}: bad numeric value {text.strip()!r}") from None
    return name, value


def load_constants(path: str | Path | None = None) -> PhysicalConstantsTable:
    """Read a constants table file; with no path, the packaged default.

    The file must start with the format header and define exactly the
    fields of :class:`PhysicalConstantsTable`, each positive and finite.
    """
    if path is None:
        text = resources.files("iondyne.data").joinpath(DEFAULT_TABLE).read_text()
        origin = DEFAULT_TABLE
    else:
        origin = str(path)
        text = Path(path).read_text()

    lines = text.splitlines()
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise ValidationError(f"{origin}: missing format header {FORMAT_HEADER!r}")

    entries: dict[str, float] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        parsed = _parse_line(raw, lineno)
        if parsed is None:
            continue
        name, value = parsed
        if name in entries:
            raise ValidationError(f"{origin}: duplicate constant {name!r} (line {lineno})")
        entries[name] = value

    expected = {f.name for f in fields(PhysicalConstantsTable)}
    missing = expected - entries.keys()
    unknown = entries.keys() - expected
    if missing:
        raise ValidationError(f"{origin}: missing constants {sorted(missing)}")
    if unknown:
        raise ValidationError(f"{origin}: unknown constants {sorted(unknown)}")
    return PhysicalConstantsTable(**entries)
