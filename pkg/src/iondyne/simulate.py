"""Synthetic shot-count generation for flip and echo scans.

All randomness flows through :func:`iondyne.rng.substream`: shot j of
duration row d in campaign block k under seed s is Bernoulli draw j of
the stream (s, k, d), so regenerating any block in isolation, in any
order, on any scheduler reproduces the campaign bytes exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .dataset import ShotDataset
from .dynamics import DynamicsParams, spin_echo_signal, spin_populations
from .errors import DomainError, ValidationError
from .physics import DecayConstants, LaserField, spin_flip_rates, stark_shift
from .rng import substream

# Flip-scan formulas assume negligible pi-polarized content; the simulator
# and the fit stage both refuse fields above this intensity fraction
# unless the config overrides it.
DEFAULT_EPS_PI_SQ_MAX = 0.05

# Campaign block layout within one run: bracketing echo scans around the
# two flip scans, so a linear intensity drift averages out at mid run.
BLOCKS_PER_RUN = 4
BLOCK_KINDS = ("echo", "flip", "flip", "echo")
BLOCK_INITS = ("echo", "up", "down", "echo")


@dataclass(frozen=True)
class SpamModel:
    """Affine map from populations to observed dark probability.

    Each state has its own probability of reading out dark; the sink
    manifold defaults to reading out bright (same as the down state)
    but is configurable for setups that pump it dark instead.
    """

    dark_given_up: float
    dark_given_down: float
    dark_given_sink: float

    def __post_init__(self):
        for name in ("dark_given_up", "dark_given_down", "dark_given_sink"):
            p = getattr(self, name)
            if not (math.isfinite(p) and 0.0 <= p <= 1.0):
                raise ValidationError(f"{name} must lie in [0, 1], got {p!r}")
        if not self.dark_given_up > self.dark_given_down:
            raise ValidationError(
                "dark_given_up must exceed dark_given_down; the readout would not distinguish the qubit states"
            )

    @classmethod
    def with_bright_sink(cls, dark_given_up: float, dark_given_down: float) -> "SpamModel":
        return cls(dark_given_up, dark_given_down, dark_given_sink=dark_given_down)

    def dark_probability(self, p_up, p_down, p_sink):
        """Observed dark probability; broadcasts over array populations."""
        q = self.dark_given_up * p_up + self.dark_given_down * p_down + self.dark_given_sink * p_sink
        bad = np.any(q < -1e-12) or np.any(q > 1.0 + 1e-12)
        if bad:
            # With populations on the simplex and coefficients in [0, 1]
            # this is unreachable; a breach means corrupted populations.
            raise ValidationError(f"dark probability left [0, 1]: {q!r}")
        return np.clip(q, 0.0, 1.0)


@dataclass(frozen=True)
class EchoSignalParams:
    """Echo fringe shape: contrast, offset, phase, contrast decay rate."""

    contrast: float
    offset: float
    phase: float = 0.0
    decay_rate: float = 0.0  # 1/s


@dataclass(frozen=True)
class ScanPlan:
    """Pulse-duration grid and per-duration shot count for one scan."""

    durations_s: np.ndarray
    shots_per_duration: int

    def __post_init__(self):
        durations = np.asarray(self.durations_s, dtype=float)
        if durations.ndim != 1 or durations.size == 0:
            raise ValidationError("scan plan needs a non-empty 1-d duration grid")
        if not np.all(np.isfinite(durations)) or np.any(durations < 0.0):
            raise ValidationError("scan durations must be finite and >= 0")
        if np.any(np.diff(durations) <= 0.0):
            raise ValidationError("scan durations must be strictly increasing")
        if not (isinstance(self.shots_per_duration, (int, np.integer)) and self.shots_per_duration >= 1):
            raise ValidationError(f"shots_per_duration must be >= 1, got {self.shots_per_duration!r}")
        durations.setflags(write=False)
        object.__setattr__(self, "durations_s", durations)
        object.__setattr__(self, "shots_per_duration", int(self.shots_per_duration))

    @classmethod
    def linear(cls, start_s: float, stop_s: float, count: int, shots: int) -> "ScanPlan":
        return cls(np.linspace(start_s, stop_s, count), shots)

    @classmethod
    def from_spacing(cls, spacing_s: float, count: int, shots: int) -> "ScanPlan":
        """Uniform grid spacing_s, 2*spacing_s, ..., count*spacing_s."""
        if not (spacing_s > 0.0 and count >= 1):
            raise ValidationError("from_spacing needs spacing_s > 0 and count >= 1")
        return cls(spacing_s * np.arange(1, count + 1, dtype=float), shots)


def require_low_pi_content(field: LaserField, eps_pi_sq_max: float = DEFAULT_EPS_PI_SQ_MAX):
    """Flip-scan pipeline guard: reject fields with too much pi light."""
    if field.eps_pi**2 > eps_pi_sq_max:
        raise DomainError(
            f"eps_pi^2 = {field.eps_pi**2:.4g} exceeds the pipeline limit {eps_pi_sq_max:.4g}; "
            "the spin-flip rate formulas assume negligible pi content"
        )


def flip_dark_probability(
    field: LaserField,
    decay: DecayConstants,
    spam: SpamModel,
    init: str,
    durations_s,
) -> np.ndarray:
    """Expected dark fraction of a flip scan (the simulation mean)."""
    rates = spin_flip_rates(field, decay.gamma_ps)
    p_up, p_down, p_sink = spin_populations(
        rates.r_plus, rates.r_minus, decay.leak_b, np.asarray(durations_s, dtype=float), init
    )
    return spam.dark_probability(p_up, p_down, p_sink)


def _draw_counts(q: np.ndarray, shots: int, seed: int, stream_block: int) -> np.ndarray:
    counts = np.empty(q.size, dtype=np.int64)
    for j, qj in enumerate(q):
        gen = substream(seed, stream_block, j)
        counts[j] = int(np.count_nonzero(gen.random(shots) < qj))
    return counts


def simulate_flip_scan(
    field: LaserField,
    decay: DecayConstants,
    spam: SpamModel,
    plan: ScanPlan,
    init: str,
    seed: int,
    stream_block: int = 0,
    eps_pi_sq_max: float = DEFAULT_EPS_PI_SQ_MAX,
    metadata: Mapping[str, str] | None = None,
) -> ShotDataset:
    """Binomial shot counts of one spin-flip scan from a pure qubit state.

    The dark probability per duration comes from the closed-form
    populations through the SPAM map; counts are independent Bernoulli
    draws addressed by (seed, stream_block, duration index, shot index).
    """
    if init not in ("up", "down"):
        raise ValidationError(f"flip scan init must be 'up' or 'down', got {init!r}")
    require_low_pi_content(field, eps_pi_sq_max)
    # Constructing DynamicsParams enforces the r_tilde invariant early.
    DynamicsParams(spin_flip_rates(field, decay.gamma_ps), decay.leak_b)
    q = flip_dark_probability(field, decay, spam, init, plan.durations_s)
    counts = _draw_counts(q, plan.shots_per_duration, seed, stream_block)
    meta = {"kind": "flip", "init": init, "seed": str(seed), "stream_block": str(stream_block)}
    meta.update(metadata or {})
    return ShotDataset(
        durations_s=plan.durations_s,
        shots=np.full(plan.durations_s.size, plan.shots_per_duration, dtype=np.int64),
        dark_counts=counts.astype(float),
        init=init,
        metadata=meta,
    )


def simulate_echo_scan(
    stark: float,
    signal: EchoSignalParams,
    plan: ScanPlan,
    seed: int,
    stream_block: int = 0,
    metadata: Mapping[str, str] | None = None,
) -> ShotDataset:
    """Binomial shot counts of one echo interferometer scan.

    The fringe model may clip at [0, 1] for extreme parameters; clipped
    values are simulated as-is (they are still valid probabilities).
    """
    echo = spin_echo_signal(
        stark, plan.durations_s, signal.contrast, signal.offset, signal.phase, signal.decay_rate
    )
    counts = _draw_counts(echo.probability, plan.shots_per_duration, seed, stream_block)
    meta = {"kind": "echo", "seed": str(seed), "stream_block": str(stream_block)}
    meta.update(metadata or {})
    return ShotDataset(
        durations_s=plan.durations_s,
        shots=np.full(plan.durations_s.size, plan.shots_per_duration, dtype=np.int64),
        dark_counts=counts.astype(float),
        init="echo",
        metadata=meta,
    )


@dataclass(frozen=True)
class RunSchedule:
    """Execution order of a campaign: one field label per run plus the
    shared scan plans and the per-block intensity drift."""

    run_labels: tuple[str, ...]
    flip_plan: ScanPlan
    echo_plan: ScanPlan
    drift_per_block: float = 0.0  # relative Omega^2 change per block

    def __post_init__(self):
        if len(self.run_labels) == 0:
            raise ValidationError("a campaign needs at least one run")
        object.__setattr__(self, "run_labels", tuple(self.run_labels))
        n_blocks = BLOCKS_PER_RUN * len(self.run_labels)
        if not math.isfinite(self.drift_per_block):
            raise ValidationError("drift_per_block must be finite")
        if 1.0 + self.drift_per_block * (n_blocks - 1) <= 0.0:
            raise ValidationError("drift_per_block would drive the intensity factor non-positive")

    @property
    def n_runs(self) -> int:
        return len(self.run_labels)


def simulate_campaign(
    schedule: RunSchedule,
    fields: Mapping[str, LaserField],
    decay: DecayConstants,
    spam: SpamModel,
    signal: EchoSignalParams,
    seed: int,
    label_metadata: Mapping[str, Mapping[str, str]] | None = None,
    eps_pi_sq_max: float = DEFAULT_EPS_PI_SQ_MAX,
) -> list[ShotDataset]:
    """Generate every dataset of a multi-run campaign.

    Each run executes the four blocks echo / flip-up / flip-down / echo
    against its field; a nonzero drift multiplies Omega^2 by
    (1 + drift_per_block * k) in global block k, modeling slow intensity
    wander that the bracketing echo scans are meant to average out.
    """
    missing = [label for label in schedule.run_labels if label not in fields]
    if missing:
        raise ValidationError(f"run labels without a field definition: {sorted(set(missing))}")
    label_metadata = label_metadata or {}

    datasets: list[ShotDataset] = []
    for run_index, label in enumerate(schedule.run_labels):
        for pos, (kind, init) in enumerate(zip(BLOCK_KINDS, BLOCK_INITS)):
            block = BLOCKS_PER_RUN * run_index + pos
            field = fields[label].with_intensity_factor(1.0 + schedule.drift_per_block * block)
            meta = {
                "detuning_label": label,
                "run_index": str(run_index),
                "block_index": str(block),
            }
            meta.update(label_metadata.get(label, {}))
            if kind == "flip":
                ds = simulate_flip_scan(
                    field, decay, spam, schedule.flip_plan, init, seed,
                    stream_block=block, eps_pi_sq_max=eps_pi_sq_max, metadata=meta,
                )
            else:
                ds = simulate_echo_scan(
                    stark_shift(field), signal, schedule.echo_plan, seed,
                    stream_block=block, metadata=meta,
                )
            datasets.append(ds)
    return datasets
