"""Campaign configuration: YAML file -> validated typed objects.

One YAML file drives all CLI stages.  Sections are optional unless the
stage that consumes them is invoked; accessors raise ConfigError naming
the missing section or field.  All frequencies in the file are ordinary
(cycles) frequencies with the unit in the key name; they are converted
to angular rad/s on load.

Schema (keys in parentheses are optional):

    (constants_file): path to a constants table, default packaged table
    (lambda_ps_nm): probe-transition wavelength override, nm

    (truth):                      # consumed by `simulate` only
      gamma_ps_2pi_mhz: 21.57
      branching_fraction: 0.93572
      resonance_freq_thz: 755.43

    (fields):                     # per-detuning laser settings
      <label>:
        detuning_ghz: -12.03      # sign sets which Zeeman leg is probed
        rabi_2pi_mhz: 447.0
        eps_plus_sq: 0.02
        eps_minus_sq: 0.98
        eps_pi_sq: 0.0

    (spam):
      dark_given_up: 0.97
      dark_given_down: 0.02
      (dark_given_sink): defaults to dark_given_down (the sink
                         scatters the readout beam like the bright state)

    (echo_signal):
      contrast: 0.4
      offset: 0.5
      (phase_rad): 0.0
      (decay_rate_per_s): 0.0

    (campaign):
      runs: [red12, blue11, ...]  # field label per run, in order
      flip:
        durations_us: [...]       # or duration_start_us/stop_us/points
        shots: 500
      echo:
        spacing_ns: 120.0
        points: 120
        shots: 100
      (drift_per_block): 0.0      # relative intensity drift per block

    (priors): rate_min_per_s, rate_max_per_s, b_max,
              dark_up_bounds/dark_down_bounds as [lo, hi]
    (mcmc): chains, burn_in, draws, (adapt_interval),
            (target_acceptance), (rhat_threshold)
    (pipeline): (eps_pi_sq_max), (min_echo_periods)

    (ledger_file): "default" for the packaged budget, or a path
                   relative to the config file; omitted -> empty ledger
    (derive):                     # direct mode, no campaign needed
      gamma_ps_2pi_mhz: 21.57
      gamma_ps_rel_unc: 3.7e-3
      branching_fraction: 0.93572
      branching_unc: 2.5e-4
      (apply_ledger): true
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .constants import PhysicalConstantsTable, load_constants
from .derive import CorrectionLedger, Uncertain, leak_from_branching
from .errors import ConfigError, ValidationError
from .inference.mcmc import McmcSettings, PriorConfig
from .physics import TWO_PI, DecayConstants, LaserField
from .simulate import (
    DEFAULT_EPS_PI_SQ_MAX,
    EchoSignalParams,
    RunSchedule,
    ScanPlan,
    SpamModel,
)

DEFAULT_MIN_ECHO_PERIODS = 3.0


@dataclass(frozen=True)
class FieldConfig:
    """Laser settings for one detuning label."""

    label: str
    field: LaserField
    detuning_ghz: float

    @property
    def detuning_sign(self) -> int:
        return -1 if self.detuning_ghz < 0.0 else 1


@dataclass(frozen=True)
class TruthConfig:
    """Ground-truth values that only the simulator may see."""

    decay: DecayConstants
    resonance_freq_hz: float

    def __post_init__(self) -> None:
        if not (self.resonance_freq_hz > 0.0 and math.isfinite(self.resonance_freq_hz)):
            raise ConfigError("resonance frequency must be positive and finite", field="truth.resonance_freq_thz")

    def optical_freq_hz(self, detuning_ghz: float) -> float:
        return self.resonance_freq_hz + detuning_ghz * 1e9


@dataclass(frozen=True)
class DirectDeriveConfig:
    """Externally supplied inputs for `derive` without a campaign."""

    gamma_ps: Uncertain
    branching: Uncertain
    apply_ledger: bool

    @property
    def leak_b(self) -> Uncertain:
        return leak_from_branching(self.branching)


@dataclass(frozen=True)
class CampaignConfig:
    """Everything the CLI stages need, parsed and validated."""

    constants: PhysicalConstantsTable
    truth: TruthConfig | None
    fields: dict[str, FieldConfig]
    spam: SpamModel | None
    echo_signal: EchoSignalParams | None
    schedule: RunSchedule | None
    priors: PriorConfig
    mcmc: McmcSettings
    eps_pi_sq_max: float
    min_echo_periods: float
    ledger: CorrectionLedger
    direct: DirectDeriveConfig | None

    def require_truth(self) -> TruthConfig:
        if self.truth is None:
            raise ConfigError("simulate needs ground-truth values", field="truth")
        return self.truth

    def require_spam(self) -> SpamModel:
        if self.spam is None:
            raise ConfigError("simulate needs a readout model", field="spam")
        return self.spam

    def require_echo_signal(self) -> EchoSignalParams:
        if self.echo_signal is None:
            raise ConfigError("simulate needs echo fringe parameters", field="echo_signal")
        return self.echo_signal

    def require_schedule(self) -> RunSchedule:
        if self.schedule is None:
            raise ConfigError("this stage needs a campaign section", field="campaign")
        return self.schedule

    def require_direct(self) -> DirectDeriveConfig:
        if self.direct is None:
            raise ConfigError("derive without campaign estimates needs a derive section", field="derive")
        return self.direct

    def field_for(self, label: str) -> FieldConfig:
        try:
            return self.fields[label]
        except KeyError:
            raise ConfigError(f"unknown field label {label!r}", field="fields") from None


def _require_mapping(node: object, field: str) -> dict:
    if not isinstance(node, dict):
        raise ConfigError(f"expected a mapping, got {type(node).__name__}", field=field)
    return node


def _take(node: dict, key: str, field: str, *, required: bool = True, default: object = None) -> object:
    if key in node:
        return node.pop(key)
    if required:
        raise ConfigError("missing required key", field=field)
    return default


def _reject_unknown(node: dict, field: str) -> None:
    if node:
        extra = ", ".join(sorted(str(k) for k in node))
        raise ConfigError(f"unknown keys: {extra}", field=field)


def _as_float(value: object, field: str, *, positive: bool = False, nonnegative: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", field=field)
    out = float(value)
    if not math.isfinite(out):
        raise ConfigError("value must be finite", field=field)
    if positive and out <= 0.0:
        raise ConfigError(f"value must be positive, got {out}", field=field)
    if nonnegative and out < 0.0:
        raise ConfigError(f"value must be non-negative, got {out}", field=field)
    return out


def _as_int(value: object, field: str, *, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"expected an integer, got {value!r}", field=field)
    if minimum is not None and value < minimum:
        raise ConfigError(f"value must be >= {minimum}, got {value}", field=field)
    return value


def _as_bool(value: object, field: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"expected true/false, got {value!r}", field=field)
    return value


def _parse_truth(node: object) -> TruthConfig:
    node = dict(_require_mapping(node, "truth"))
    gamma_2pi_mhz = _as_float(_take(node, "gamma_ps_2pi_mhz", "truth.gamma_ps_2pi_mhz"),
                              "truth.gamma_ps_2pi_mhz", positive=True)
    branching = _as_float(_take(node, "branching_fraction", "truth.branching_fraction"),
                          "truth.branching_fraction", positive=True)
    freq_thz = _as_float(_take(node, "resonance_freq_thz", "truth.resonance_freq_thz"),
                         "truth.resonance_freq_thz", positive=True)
    _reject_unknown(node, "truth")
    if not (0.0 < branching <= 1.0):
        raise ConfigError(f"branching fraction must be in (0, 1], got {branching}", field="truth.branching_fraction")
    decay = DecayConstants.from_branching(gamma_ps=TWO_PI * gamma_2pi_mhz * 1e6, branching_fraction=branching)
    return TruthConfig(decay=decay, resonance_freq_hz=freq_thz * 1e12)


def _parse_field(label: str, node: object) -> FieldConfig:
    where = f"fields.{label}"
    node = dict(_require_mapping(node, where))
    detuning_ghz = _as_float(_take(node, "detuning_ghz", f"{where}.detuning_ghz"), f"{where}.detuning_ghz")
    rabi_2pi_mhz = _as_float(_take(node, "rabi_2pi_mhz", f"{where}.rabi_2pi_mhz"),
                             f"{where}.rabi_2pi_mhz", positive=True)
    eps_plus_sq = _as_float(_take(node, "eps_plus_sq", f"{where}.eps_plus_sq"),
                            f"{where}.eps_plus_sq", nonnegative=True)
    eps_minus_sq = _as_float(_take(node, "eps_minus_sq", f"{where}.eps_minus_sq"),
                             f"{where}.eps_minus_sq", nonnegative=True)
    eps_pi_sq = _as_float(_take(node, "eps_pi_sq", f"{where}.eps_pi_sq"),
                          f"{where}.eps_pi_sq", nonnegative=True)
    _reject_unknown(node, where)
    if detuning_ghz == 0.0:
        raise ConfigError("detuning must be nonzero", field=f"{where}.detuning_ghz")
    try:
        field = LaserField.from_intensity_fractions(
            detuning_delta=TWO_PI * detuning_ghz * 1e9,
            rabi_omega=TWO_PI * rabi_2pi_mhz * 1e6,
            eps_plus_sq=eps_plus_sq,
            eps_minus_sq=eps_minus_sq,
            eps_pi_sq=eps_pi_sq,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc), field=where) from exc
    return FieldConfig(label=label, field=field, detuning_ghz=detuning_ghz)


def _parse_spam(node: object) -> SpamModel:
    node = dict(_require_mapping(node, "spam"))
    dark_up = _as_float(_take(node, "dark_given_up", "spam.dark_given_up"), "spam.dark_given_up")
    dark_down = _as_float(_take(node, "dark_given_down", "spam.dark_given_down"), "spam.dark_given_down")
    sink_node = _take(node, "dark_given_sink", "spam.dark_given_sink", required=False)
    _reject_unknown(node, "spam")
    try:
        if sink_node is None:
            return SpamModel.with_bright_sink(dark_up, dark_down)
        return SpamModel(dark_given_up=dark_up, dark_given_down=dark_down,
                         dark_given_sink=_as_float(sink_node, "spam.dark_given_sink"))
    except ValidationError as exc:
        raise ConfigError(str(exc), field="spam") from exc


def _parse_echo_signal(node: object) -> EchoSignalParams:
    node = dict(_require_mapping(node, "echo_signal"))
    contrast = _as_float(_take(node, "contrast", "echo_signal.contrast"), "echo_signal.contrast")
    offset = _as_float(_take(node, "offset", "echo_signal.offset"), "echo_signal.offset")
    phase = _as_float(_take(node, "phase_rad", "echo_signal.phase_rad", required=False, default=0.0),
                      "echo_signal.phase_rad")
    decay = _as_float(_take(node, "decay_rate_per_s", "echo_signal.decay_rate_per_s",
                            required=False, default=0.0),
                      "echo_signal.decay_rate_per_s", nonnegative=True)
    _reject_unknown(node, "echo_signal")
    return EchoSignalParams(contrast=contrast, offset=offset, phase=phase, decay_rate=decay)


def _parse_durations(node: dict, field: str) -> np.ndarray:
    if "durations_us" in node:
        raw = _take(node, "durations_us", f"{field}.durations_us")
        if not isinstance(raw, list) or not raw:
            raise ConfigError("expected a non-empty list of durations", field=f"{field}.durations_us")
        values = [_as_float(v, f"{field}.durations_us", positive=True) for v in raw]
        return np.asarray(values, dtype=float) * 1e-6
    start = _as_float(_take(node, "duration_start_us", f"{field}.duration_start_us"),
                      f"{field}.duration_start_us", positive=True)
    stop = _as_float(_take(node, "duration_stop_us", f"{field}.duration_stop_us"),
                     f"{field}.duration_stop_us", positive=True)
    points = _as_int(_take(node, "points", f"{field}.points"), f"{field}.points", minimum=2)
    if stop <= start:
        raise ConfigError(f"duration_stop_us must exceed duration_start_us, got {stop} <= {start}",
                          field=f"{field}.duration_stop_us")
    return np.linspace(start * 1e-6, stop * 1e-6, points)


def _parse_campaign(node: object) -> RunSchedule:
    node = dict(_require_mapping(node, "campaign"))
    runs = _take(node, "runs", "campaign.runs")
    if not isinstance(runs, list) or not runs or not all(isinstance(r, str) for r in runs):
        raise ConfigError("expected a non-empty list of field labels", field="campaign.runs")

    flip = dict(_require_mapping(_take(node, "flip", "campaign.flip"), "campaign.flip"))
    flip_durations = _parse_durations(flip, "campaign.flip")
    flip_shots = _as_int(_take(flip, "shots", "campaign.flip.shots"), "campaign.flip.shots", minimum=1)
    _reject_unknown(flip, "campaign.flip")

    echo = dict(_require_mapping(_take(node, "echo", "campaign.echo"), "campaign.echo"))
    spacing_ns = _as_float(_take(echo, "spacing_ns", "campaign.echo.spacing_ns"),
                           "campaign.echo.spacing_ns", positive=True)
    echo_points = _as_int(_take(echo, "points", "campaign.echo.points"), "campaign.echo.points", minimum=2)
    echo_shots = _as_int(_take(echo, "shots", "campaign.echo.shots"), "campaign.echo.shots", minimum=1)
    _reject_unknown(echo, "campaign.echo")

    drift = _as_float(_take(node, "drift_per_block", "campaign.drift_per_block",
                            required=False, default=0.0),
                      "campaign.drift_per_block")
    _reject_unknown(node, "campaign")

    try:
        return RunSchedule(
            run_labels=tuple(runs),
            flip_plan=ScanPlan(durations_s=flip_durations, shots_per_duration=flip_shots),
            echo_plan=ScanPlan.from_spacing(spacing_s=spacing_ns * 1e-9, count=echo_points, shots=echo_shots),
            drift_per_block=drift,
        )
    except ValidationError as exc:
        raise ConfigError(str(exc), field="campaign") from exc


def _as_bounds(value: object, field: str) -> tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise ConfigError(f"expected [lo, hi], got {value!r}", field=field)
    return (_as_float(value[0], field), _as_float(value[1], field))


def _parse_priors(node: object) -> PriorConfig:
    node = dict(_require_mapping(node, "priors"))
    kwargs: dict[str, object] = {}
    for yaml_key, attr in (("rate_min_per_s", "rate_min"),
                           ("rate_max_per_s", "rate_max"),
                           ("b_max", "b_max")):
        value = _take(node, yaml_key, f"priors.{yaml_key}", required=False)
        if value is not None:
            kwargs[attr] = _as_float(value, f"priors.{yaml_key}")
    for key in ("dark_up_bounds", "dark_down_bounds"):
        value = _take(node, key, f"priors.{key}", required=False)
        if value is not None:
            kwargs[key] = _as_bounds(value, f"priors.{key}")
    _reject_unknown(node, "priors")
    try:
        return PriorConfig(**{**_dataclass_kwargs(PriorConfig()), **kwargs})
    except ValidationError as exc:
        raise ConfigError(str(exc), field="priors") from exc


def _parse_mcmc(node: object) -> McmcSettings:
    node = dict(_require_mapping(node, "mcmc"))
    kwargs: dict[str, object] = {}
    for key in ("chains", "burn_in", "draws", "adapt_interval"):
        value = _take(node, key, f"mcmc.{key}", required=False)
        if value is not None:
            kwargs[key] = _as_int(value, f"mcmc.{key}", minimum=1)
    for key in ("target_acceptance", "rhat_threshold"):
        value = _take(node, key, f"mcmc.{key}", required=False)
        if value is not None:
            kwargs[key] = _as_float(value, f"mcmc.{key}", positive=True)
    _reject_unknown(node, "mcmc")
    try:
        return McmcSettings(**{**_dataclass_kwargs(McmcSettings()), **kwargs})
    except ValidationError as exc:
        raise ConfigError(str(exc), field="mcmc") from exc


def _parse_direct(node: object) -> DirectDeriveConfig:
    node = dict(_require_mapping(node, "derive"))
    gamma_2pi_mhz = _as_float(_take(node, "gamma_ps_2pi_mhz", "derive.gamma_ps_2pi_mhz"),
                              "derive.gamma_ps_2pi_mhz", positive=True)
    gamma_rel = _as_float(_take(node, "gamma_ps_rel_unc", "derive.gamma_ps_rel_unc"),
                          "derive.gamma_ps_rel_unc", nonnegative=True)
    branching = _as_float(_take(node, "branching_fraction", "derive.branching_fraction"),
                          "derive.branching_fraction", positive=True)
    branching_unc = _as_float(_take(node, "branching_unc", "derive.branching_unc"),
                              "derive.branching_unc", nonnegative=True)
    apply_node = _take(node, "apply_ledger", "derive.apply_ledger", required=False, default=True)
    _reject_unknown(node, "derive")
    if not branching < 1.0:
        raise ConfigError(f"branching fraction must be below 1, got {branching}",
                          field="derive.branching_fraction")
    gamma = TWO_PI * gamma_2pi_mhz * 1e6
    return DirectDeriveConfig(
        gamma_ps=Uncertain(gamma, gamma * gamma_rel),
        branching=Uncertain(branching, branching_unc),
        apply_ledger=_as_bool(apply_node, "derive.apply_ledger"),
    )


def _dataclass_kwargs(obj) -> dict:
    return {name: getattr(obj, name) for name in obj.__dataclass_fields__}


def load_config(path: str | Path) -> CampaignConfig:
    """Parse and validate a campaign YAML file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}", field=str(path)) from exc
    try:
        root = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}", field=str(path)) from exc
    if root is None:
        root = {}
    root = dict(_require_mapping(root, "<root>"))

    constants_file = _take(root, "constants_file", "constants_file", required=False)
    if constants_file is None:
        constants = load_constants()
    else:
        if not isinstance(constants_file, str):
            raise ConfigError(f"expected a path string, got {constants_file!r}", field="constants_file")
        constants = load_constants(path.parent / constants_file)
    lambda_nm = _take(root, "lambda_ps_nm", "lambda_ps_nm", required=False)
    if lambda_nm is not None:
        constants = constants.with_wavelength(_as_float(lambda_nm, "lambda_ps_nm", positive=True) * 1e-9)

    truth_node = _take(root, "truth", "truth", required=False)
    truth = None if truth_node is None else _parse_truth(truth_node)

    fields_node = _take(root, "fields", "fields", required=False)
    fields: dict[str, FieldConfig] = {}
    if fields_node is not None:
        fields_node = _require_mapping(fields_node, "fields")
        if not fields_node:
            raise ConfigError("at least one field label is required", field="fields")
        for label, sub in fields_node.items():
            if not isinstance(label, str) or not label:
                raise ConfigError(f"field labels must be non-empty strings, got {label!r}", field="fields")
            fields[label] = _parse_field(label, sub)

    spam_node = _take(root, "spam", "spam", required=False)
    spam = None if spam_node is None else _parse_spam(spam_node)

    echo_node = _take(root, "echo_signal", "echo_signal", required=False)
    echo_signal = None if echo_node is None else _parse_echo_signal(echo_node)

    campaign_node = _take(root, "campaign", "campaign", required=False)
    schedule = None
    if campaign_node is not None:
        schedule = _parse_campaign(campaign_node)
        for label in schedule.run_labels:
            if label not in fields:
                raise ConfigError(f"run label {label!r} has no matching entry in fields", field="campaign.runs")

    priors_node = _take(root, "priors", "priors", required=False)
    priors = PriorConfig() if priors_node is None else _parse_priors(priors_node)

    mcmc_node = _take(root, "mcmc", "mcmc", required=False)
    mcmc = McmcSettings() if mcmc_node is None else _parse_mcmc(mcmc_node)

    pipeline_node = _take(root, "pipeline", "pipeline", required=False)
    eps_pi_sq_max = DEFAULT_EPS_PI_SQ_MAX
    min_echo_periods = DEFAULT_MIN_ECHO_PERIODS
    if pipeline_node is not None:
        pipeline_node = dict(_require_mapping(pipeline_node, "pipeline"))
        value = _take(pipeline_node, "eps_pi_sq_max", "pipeline.eps_pi_sq_max", required=False)
        if value is not None:
            eps_pi_sq_max = _as_float(value, "pipeline.eps_pi_sq_max", nonnegative=True)
        value = _take(pipeline_node, "min_echo_periods", "pipeline.min_echo_periods", required=False)
        if value is not None:
            min_echo_periods = _as_float(value, "pipeline.min_echo_periods", positive=True)
        _reject_unknown(pipeline_node, "pipeline")

    ledger_node = _take(root, "ledger_file", "ledger_file", required=False)
    if ledger_node is None:
        ledger = CorrectionLedger.empty()
    elif ledger_node == "default":
        ledger = CorrectionLedger.packaged_default()
    elif isinstance(ledger_node, str):
        ledger = CorrectionLedger.from_csv(path.parent / ledger_node)
    else:
        raise ConfigError(f"expected 'default' or a path string, got {ledger_node!r}", field="ledger_file")

    direct_node = _take(root, "derive", "derive", required=False)
    direct = None if direct_node is None else _parse_direct(direct_node)

    _reject_unknown(root, "<root>")
    return CampaignConfig(
        constants=constants,
        truth=truth,
        fields=fields,
        spam=spam,
        echo_signal=echo_signal,
        schedule=schedule,
        priors=priors,
        mcmc=mcmc,
        eps_pi_sq_max=eps_pi_sq_max,
        min_echo_periods=min_echo_periods,
        ledger=ledger,
        direct=direct,
    )
