"""Shot-count datasets and their on-disk format.

One file holds one scan: a format header, metadata lines, a column
header, then one row per pulse duration. The writer is deterministic
down to the byte (sorted metadata keys, fixed float formatting) so that
equal datasets always serialize identically.

    # iondyne-dataset v1
    # detuning_label=d12r
    # kind=flip
    duration_s,shots,dark_count,init
    1.00000000e-05,500,12,up
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import DatasetFormatError, ValidationError

FORMAT_HEADER = "# iondyne-dataset v1"
COLUMN_HEADER = "duration_s,shots,dark_count,init"
INIT_LABELS = ("up", "down", "echo")

_META_KEY_RE = re.compile(r"^[a-z0-9_][a-z0-9_.-]*$")


def format_duration(value: float) -> str:
    """Duration in seconds with 9 significant digits, as written to file."""
    return f"{value:.8e}"


@dataclass(frozen=True)
class ShotDataset:
    """Dark-state counts per pulse duration for a single scan.

    ``dark_counts`` may be non-integral in memory (expected-count sets
    used for estimator validation); writing to disk requires integers.
    """

    durations_s: np.ndarray
    shots: np.ndarray
    dark_counts: np.ndarray
    init: str
    metadata: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        durations = np.asarray(self.durations_s, dtype=float)
        shots = np.asarray(self.shots, dtype=np.int64)
        darks = np.asarray(self.dark_counts, dtype=float)
        if durations.ndim != 1 or durations.size == 0:
            raise ValidationError("durations_s must be a non-empty 1-d array")
        if shots.shape != durations.shape or darks.shape != durations.shape:
            raise ValidationError("durations_s, shots and dark_counts must have matching shapes")
        if not np.all(np.isfinite(durations)) or np.any(durations < 0.0):
            raise ValidationError("durations must be finite and >= 0")
        if np.unique(durations).size != durations.size:
            raise ValidationError("durations must be pairwise distinct")
        if np.any(shots < 1):
            raise ValidationError("every duration needs at least one shot")
        if np.any(darks < 0) or np.any(darks > shots):
            raise ValidationError("dark counts must lie in [0, shots]")
        if self.init not in INIT_LABELS:
            raise ValidationError(f"init must be one of {INIT_LABELS}, got {self.init!r}")
        meta = dict(self.metadata)
        for key, value in meta.items():
            if not _META_KEY_RE.match(key):
                raise ValidationError(f"bad metadata key {key!r}")
            if "\n" in str(value):
                raise ValidationError(f"metadata value for {key!r} contains a newline")
        durations.setflags(write=False)
        shots.setflags(write=False)
        darks.setflags(write=False)
        object.__setattr__(self, "durations_s", durations)
        object.__setattr__(self, "shots", shots)
        object.__setattr__(self, "dark_counts", darks)
        object.__setattr__(self, "metadata", MappingProxyType(meta))

    @property
    def n_durations(self) -> int:
        return int(self.durations_s.size)

    @property
    def dark_fractions(self) -> np.ndarray:
        return self.dark_counts / self.shots

    def to_text(self) -> str:
        """Serialize; raises if dark counts are not integers."""
        darks = self.dark_counts
        if not np.all(darks == np.round(darks)):
            raise ValidationError("dark counts must be integral to serialize")
        formatted = [format_duration(d) for d in self.durations_s]
        if len({float(text) for text in formatted}) != len(formatted):
            raise ValidationError("durations collide at 9 significant digits; cannot serialize faithfully")
        lines = [FORMAT_HEADER]
        for key in sorted(self.metadata):
            lines.append(f"# {key}={self.metadata[key]}")
        lines.append(COLUMN_HEADER)
        for text, n, k in zip(formatted, self.shots, darks):
            lines.append(f"{text},{int(n)},{int(k)},{self.init}")
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path):
        Path(path).write_text(self.to_text())


def read_dataset(path: str | Path) -> ShotDataset:
    """Parse one dataset file, enforcing the format contract strictly."""
    origin = str(path)
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != FORMAT_HEADER:
        raise DatasetFormatError(f"{origin}: first line must be {FORMAT_HEADER!r}")

    metadata: dict[str, str] = {}
    row_start = None
    for i, line in enumerate(lines[1:], start=1):
        if line.startswith("# "):
            body = line[2:]
            if "=" not in body:
                raise DatasetFormatError(f"{origin}: metadata line {i + 1} is not 'key=value': {line!r}")
            key, _, value = body.partition("=")
            if key in metadata:
                raise DatasetFormatError(f"{origin}: duplicate metadata key {key!r}")
            metadata[key] = value
        elif line == COLUMN_HEADER:
            row_start = i + 1
            break
        else:
            raise DatasetFormatError(f"{origin}: unexpected line {i + 1} before column header: {line!r}")
    if row_start is None:
        raise DatasetFormatError(f"{origin}: missing column header {COLUMN_HEADER!r}")

    durations, shots, darks, inits = [], [], [], []
    for i, line in enumerate(lines[row_start:], start=row_start + 1):
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise DatasetFormatError(f"{origin}: line {i}: expected 4 fields, got {len(parts)}")
        try:
            durations.append(float(parts[0]))
            shots.append(int(parts[1]))
            darks.append(int(parts[2]))
        except ValueError:
            raise DatasetFormatError(f"{origin}: line {i}: bad numeric field in {line!r}") from None
        if parts[3] not in INIT_LABELS:
            raise DatasetFormatError(f"{origin}: line {i}: bad init label {parts[3]!r}")
        inits.append(parts[3])
    if not durations:
        raise DatasetFormatError(f"{origin}: no data rows")
    if len(set(inits)) != 1:
        raise DatasetFormatError(f"{origin}: mixed init labels {sorted(set(inits))}; one scan per file")

    try:
        return ShotDataset(
            durations_s=np.array(durations),
            shots=np.array(shots),
            dark_counts=np.array(darks, dtype=float),
            init=inits[0],
            metadata=metadata,
        )
    except ValidationError as exc:
        raise DatasetFormatError(f"{origin}: {exc}") from exc
