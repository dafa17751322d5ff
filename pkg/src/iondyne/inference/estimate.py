"""Common result container for the fitters, with its text record format.

Sampled fits carry convergence diagnostics and retained draws; weighted
least-squares fits report NaN for the sampler-only fields. The record
format written next to the datasets is append-only CSV under a header:

    # iondyne-estimates v1
    # key=value
    param,median,ci68_lo,ci68_hi,rhat
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from ..errors import DatasetFormatError, ValidationError

FORMAT_HEADER = "# iondyne-estimates v1"
COLUMN_HEADER = "param,median,ci68_lo,ci68_hi,rhat"

_PARAM_RE = re.compile(r"^[a-z0-9_]+$")


@dataclass(frozen=True)
class PosteriorEstimate:
    """Point estimates with 68% central intervals for one fit."""

    params: tuple[str, ...]
    median: np.ndarray
    ci68_lo: np.ndarray
    ci68_hi: np.ndarray
    rhat: np.ndarray            # NaN for non-sampled fits
    acceptance_rate: float      # NaN for non-sampled fits
    converged: bool
    samples: np.ndarray | None = None  # retained draws (n, len(params)), sampled fits only
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        params = tuple(self.params)
        if len(params) == 0 or len(set(params)) != len(params):
            raise ValidationError("params must be non-empty and unique")
        for name in params:
            if not _PARAM_RE.match(name):
                raise ValidationError(f"bad parameter name {name!r}")
        arrays = {}
        for name in ("median", "ci68_lo", "ci68_hi", "rhat"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (len(params),):
                raise ValidationError(f"{name} must have one entry per parameter")
            arr.setflags(write=False)
            arrays[name] = arr
        if np.any(arrays["ci68_lo"] > arrays["median"]) or np.any(arrays["median"] > arrays["ci68_hi"]):
            raise ValidationError("interval must bracket the point estimate: ci68_lo <= median <= ci68_hi")
        if self.samples is not None and self.samples.shape[1] != len(params):
            raise ValidationError("samples must have one column per parameter")
        object.__setattr__(self, "params", params)
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "metadata", MappingProxyType(dict(self.metadata)))

    def _index(self, name: str) -> int:
        try:
            return self.params.index(name)
        except ValueError:
            raise KeyError(f"no parameter {name!r}; have {self.params}") from None

    def value(self, name: str) -> float:
        return float(self.median[self._index(name)])

    def interval(self, name: str) -> tuple[float, float]:
        i = self._index(name)
        return float(self.ci68_lo[i]), float(self.ci68_hi[i])

    def sigma(self, name: str) -> float:
        """Half-width of the 68% interval, the 1-sigma equivalent."""
        lo, hi = self.interval(name)
        return 0.5 * (hi - lo)

    def to_text(self) -> str:
        lines = [FORMAT_HEADER]
        meta = dict(self.metadata)
        meta.setdefault("acceptance_rate", repr(float(self.acceptance_rate)))
        meta.setdefault("converged", str(self.converged).lower())
        for key in sorted(meta):
            lines.append(f"# {key}={meta[key]}")
        lines.append(COLUMN_HEADER)
        for i, name in enumerate(self.params):
            fields = (self.median[i], self.ci68_lo[i], self.ci68_hi[i], self.rhat[i])
            lines.append(name + "," + ",".join(repr(float(v)) for v in fields))
        return "\n".join(lines) + "\n"


def write_estimates(estimate: PosteriorEstimate, path: str | Path):
    Path(path).write_text(estimate.to_text())


def read_estimates(path: str | Path) -> PosteriorEstimate:
    """Parse one estimate record file (samples are not persisted)."""
    origin = str(path)
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != FORMAT_HEADER:
        raise DatasetFormatError(f"{origin}: first line must be {FORMAT_HEADER!r}")
    metadata: dict[str, str] = {}
    row_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("# "):
            key, sep, value = line[2:].partition("=")
            if not sep:
                raise DatasetFormatError(f"{origin}: bad metadata line {i + 1}: {line!r}")
            metadata[key] = value
        elif line == COLUMN_HEADER:
            row_start = i + 1
            break
        else:
            raise DatasetFormatError(f"{origin}: unexpected line {i + 1}: {line!r}")
    if row_start is None:
        raise DatasetFormatError(f"{origin}: missing column header {COLUMN_HEADER!r}")

    names, med, lo, hi, rhat = [], [], [], [], []
    for i, line in enumerate(lines[row_start:], start=row_start + 1):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise DatasetFormatError(f"{origin}: line {i}: expected 5 fields")
        names.append(parts[0])
        try:
            for target, text in zip((med, lo, hi, rhat), parts[1:]):
                target.append(float(text))
        except ValueError:
            raise DatasetFormatError(f"{origin}: line {i}: bad numeric field") from None
    if not names:
        raise DatasetFormatError(f"{origin}: no estimate rows")

    acceptance = float(metadata.pop("acceptance_rate", "nan"))
    converged = metadata.pop("converged", "true") == "true"
    try:
        return PosteriorEstimate(
            params=tuple(names),
            median=np.array(med),
            ci68_lo=np.array(lo),
            ci68_hi=np.array(hi),
            rhat=np.array(rhat),
            acceptance_rate=acceptance,
            converged=converged,
            metadata=metadata,
        )
    except ValidationError as exc:
        raise DatasetFormatError(f"{origin}: {exc}") from exc


def central_interval_summary(draws: np.ndarray) -> tuple[float, float, float]:
    """(median, 16th, 84th percentile) of one parameter's draws."""
    if draws.size == 0 or not np.all(np.isfinite(draws)):
        raise ValidationError("draws must be non-empty and finite")
    med, lo, hi = np.quantile(draws, [0.5, 0.16, 0.84])
    return float(med), float(lo), float(hi)
