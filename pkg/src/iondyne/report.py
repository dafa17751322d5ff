"""Human-readable campaign report: summary text, plot tables, figures.

Reads the outputs of earlier stages (results/, and when present
estimates/ plus datasets/) and renders everything a reader needs into
out_dir/report: a text summary with parenthetical uncertainties, one
plot-ready CSV per figure, and the figures themselves as PNG files.

With ``fixed_clock`` the timestamp line is replaced by a constant token
so two runs over the same inputs produce byte-identical files.
"""

from __future__ import annotations

import math
from datetime import datetime, timezone
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import ShotDataset, read_dataset
from .derive import CorrectionLedger
from .dynamics import spin_echo_signal, spin_populations
from .errors import ValidationError
from .inference import PosteriorEstimate, read_estimates
from .physics import TWO_PI
from .pipeline import (
    DATASETS_DIR,
    ESTIMATES_DIR,
    REPORT_DIR,
    RESULTS_DIR,
    _promote,
    _stage_dir,
    load_run_estimates,
    read_results,
    resonance_points,
)

FIXED_CLOCK_TOKEN = "fixed-clock"
_PNG_DPI = 120
_PNG_METADATA = {"Software": "iondyne"}
_FIGSIZE = (6.0, 3.6)


def format_parenthetical(value: float, sigma: float) -> str:
    """Concise uncertainty notation: 6.904 +- 0.026 -> '6.904(26)'.

    The uncertainty keeps two significant digits when its leading digits
    are below 355, one digit up to 949, and rounds up to '(10)' above
    that, following the usual particle-data convention. Falls back to
    explicit +- form when the uncertainty exceeds the value's last
    integer digit.
    """
    if not (math.isfinite(value) and math.isfinite(sigma)) or sigma <= 0.0:
        return repr(value)
    e = math.floor(math.log10(sigma))
    three = round(sigma / 10.0 ** e * 100.0)
    if three >= 950:
        digits, e = 2, e + 1
    elif three >= 355:
        digits = 1
    else:
        digits = 2
    last_place = e - digits + 1
    if last_place > 0:
        return f"{value:.6g} +- {sigma:.2g}"
    par = round(sigma / 10.0 ** last_place)
    return f"{value:.{-last_place}f}({par})"


def _fmt(values: dict[str, float], name: str, scale: float = 1.0) -> str:
    return format_parenthetical(values[name] * scale, values[f"{name}_sigma"] * scale)


def _summary_text(values: dict[str, float], ledger: CorrectionLedger,
                  per_run: list[dict[str, float]], stamp: str, figure_note: str) -> str:
    lines = [
        "iondyne campaign report",
        f"generated_at: {stamp}",
        "",
        "== final quantities ==",
        f"doublet decay rate      gamma_ps / 2pi = {_fmt(values, 'gamma_ps', 1.0 / TWO_PI / 1e6)} MHz",
        f"sink decay rate         gamma_pd / 2pi = {_fmt(values, 'gamma_pd', 1.0 / TWO_PI / 1e6)} MHz",
        f"leak ratio              b = {_fmt(values, 'leak_b')}",
        f"branching fraction      {_fmt(values, 'branching_fraction')}",
        f"excited-state lifetime  tau = {_fmt(values, 'lifetime', 1e9)} ns",
        f"reduced dipole element  d = {_fmt(values, 'd_reduced')} e*a0",
        f"partner transition      sqrt(2) d = {_fmt(values, 'd_partner')} e*a0",
        "",
        "== relative uncertainty composition (gamma_ps) ==",
        f"statistical             {values['stat_rel']:.2e}",
        f"resonance zero crossing {values['resonance_rel']:.2e}",
        f"systematic ledger       {values['ledger_unc_rel']:.2e}",
        f"applied ledger shift    {values['ledger_shift_rel']:+.2e}",
        f"total                   {values['gamma_ps_sigma'] / values['gamma_ps']:.2e}",
        "",
        "== correction ledger ==",
    ]
    if ledger.rows:
        width = max(len(row.label) for row in ledger.rows)
        lines += [
            f"{row.label:<{width}}  shift {row.shift_rel * 1e3:+6.2f}e-3  unc {row.unc_rel * 1e3:5.2f}e-3"
            for row in ledger.rows
        ]
        lines.append(
            f"{'total':<{width}}  shift {ledger.total_shift_rel * 1e3:+6.2f}e-3  "
            f"unc {ledger.total_unc_rel * 1e3:5.2f}e-3 (rss)"
        )
    else:
        lines.append("(empty)")
    if "resonance_freq_hz" in values:
        lines += [
            "",
            "== resonance ==",
            f"zero crossing  {values['resonance_freq_hz'] / 1e12:.6f} THz"
            f" +- {values['resonance_freq_sigma_hz'] / 1e6:.1f} MHz",
            f"points         {len(per_run)}",
        ]
    if per_run:
        lines += ["", "== per-run closure ==", "run  label            detuning/2pi (GHz)  gamma_ps/2pi (MHz)"]
        for row in per_run:
            scaled = format_parenthetical(row["gamma_ps_rad_s"] / TWO_PI / 1e6,
                                          row["gamma_ps_sigma_rad_s"] / TWO_PI / 1e6)
            lines.append(
                f"{row['run_index']:>3.0f}  {row['label']:<15}  {row['detuning_rad_s'] / TWO_PI / 1e9:>+18.3f}  {scaled}"
            )
    if figure_note:
        lines += ["", figure_note]
    return "\n".join(lines) + "\n"


def _read_per_run(path: Path) -> list[dict[str, float]]:
    lines = path.read_text().splitlines()
    if not lines:
        return []
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        row: dict[str, float] = {}
        for key, part in zip(header, parts):
            if key == "label":
                row[key] = part
            else:
                row[key] = float(part)
        rows.append(row)
    return rows


def _write_csv(path: Path, header: str, columns: list[np.ndarray]):
    rows = [",".join(repr(float(c[i])) for c in columns) for i in range(len(columns[0]))]
    path.write_text("\n".join([header] + rows) + "\n")


def _save_png(fig, path: Path):
    fig.savefig(path, dpi=_PNG_DPI, metadata=_PNG_METADATA)
    plt.close(fig)


def _flip_model(flip: PosteriorEstimate, t: np.ndarray, init: str) -> np.ndarray:
    p_up, _, _ = spin_populations(
        flip.value("r_plus"), flip.value("r_minus"), flip.value("leak_b"), t, init
    )
    dark_up, dark_down = flip.value("dark_up"), flip.value("dark_down")
    return dark_down + (dark_up - dark_down) * p_up


def _render_flip_figure(staged: Path, up: ShotDataset, down: ShotDataset, flip: PosteriorEstimate):
    t = up.durations_s
    model_up = _flip_model(flip, t, "up")
    model_down = _flip_model(flip, down.durations_s, "down")
    _write_csv(
        staged / "fig_flip.csv",
        "duration_s,frac_up,model_up,frac_down,model_down",
        [t, up.dark_fractions, model_up, down.durations_s, down.dark_fractions, model_down],
    )
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.semilogx(t, up.dark_fractions, "o", ms=3, label="init up")
    ax.semilogx(t, model_up, "-", lw=1)
    ax.semilogx(down.durations_s, down.dark_fractions, "s", ms=3, label="init down")
    ax.semilogx(down.durations_s, model_down, "-", lw=1)
    ax.set_xlabel("pulse duration (s)")
    ax.set_ylabel("dark fraction")
    ax.legend(loc="best")
    fig.tight_layout()
    _save_png(fig, staged / "fig_flip.png")


def _render_echo_figure(staged: Path, echo: ShotDataset, fit: PosteriorEstimate):
    t = echo.durations_s
    dense = np.linspace(t[0], t[-1], max(400, 4 * t.size))
    model = spin_echo_signal(
        fit.value("stark"), dense, fit.value("contrast"), fit.value("offset"),
        fit.value("phase"), fit.value("decay_rate"),
    ).probability
    at_points = spin_echo_signal(
        fit.value("stark"), t, fit.value("contrast"), fit.value("offset"),
        fit.value("phase"), fit.value("decay_rate"),
    ).probability
    _write_csv(staged / "fig_echo.csv", "duration_s,frac,model", [t, echo.dark_fractions, at_points])
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(t * 1e6, echo.dark_fractions, "o", ms=3, label="data")
    ax.plot(dense * 1e6, model, "-", lw=1, label="fit")
    ax.set_xlabel("echo pulse time (us)")
    ax.set_ylabel("dark fraction")
    ax.legend(loc="best")
    fig.tight_layout()
    _save_png(fig, staged / "fig_echo.png")


def _render_resonance_figure(staged: Path, values: dict[str, float],
                             points: list[dict[str, float]]):
    zero_hz = values["resonance_freq_hz"]
    slope = values["resonance_slope"]
    x_hz = np.array([p["optical_freq_hz"] for p in points])
    y = np.array([p["ordinate_s"] for p in points])
    y_sigma = np.array([p["ordinate_sigma_s"] for p in points])
    line_at = slope * TWO_PI * (x_hz - zero_hz)
    _write_csv(
        staged / "fig_resonance.csv",
        "optical_freq_hz,ordinate_s,ordinate_sigma_s,fit_line_s",
        [x_hz, y, y_sigma, line_at],
    )
    pad = 0.08 * (x_hz.max() - x_hz.min() or 1e9)
    dense_hz = np.linspace(x_hz.min() - pad, x_hz.max() + pad, 200)
    dense_line = slope * TWO_PI * (dense_hz - zero_hz)
    _write_csv(staged / "fig_resonance_line.csv", "optical_freq_hz,fit_line_s", [dense_hz, dense_line])

    offset_ghz = (x_hz - zero_hz) / 1e9
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.errorbar(offset_ghz, y * 1e9, yerr=y_sigma * 1e9, fmt="o", ms=3, label="runs")
    ax.plot((dense_hz - zero_hz) / 1e9, dense_line * 1e9, "-", lw=1, label="fit")
    ax.axhline(0.0, color="gray", lw=0.5)
    ax.axvline(0.0, color="gray", lw=0.5)
    ax.set_xlabel("detuning from fitted resonance (GHz)")
    ax.set_ylabel("sign * stark / delta_r (ns)")
    ax.legend(loc="best")
    fig.tight_layout()
    _save_png(fig, staged / "fig_resonance.png")


def run_report(out_dir: str | Path, fixed_clock: bool = False) -> list[Path]:
    """Render out_dir/report from the stage outputs already present."""
    out_dir = Path(out_dir)
    results_dir = out_dir / RESULTS_DIR
    if not results_dir.is_dir():
        raise ValidationError(f"{results_dir} not found; run derive first")
    values = read_results(results_dir / "summary.txt")
    ledger = CorrectionLedger.from_csv(results_dir / "budget.csv")
    per_run = _read_per_run(results_dir / "per_run.csv")

    target, staged = _stage_dir(out_dir, REPORT_DIR)
    produced = ["report.txt"]

    estimates_dir = out_dir / ESTIMATES_DIR
    datasets_dir = out_dir / DATASETS_DIR
    figure_note = ""
    if per_run and estimates_dir.is_dir():
        runs = load_run_estimates(out_dir)
        first = runs[0].run_index
        flip = read_estimates(estimates_dir / f"run{first:03d}_flip.csv")
        echo_fit = read_estimates(estimates_dir / f"run{first:03d}_echo_pre.csv")

        points = [
            {
                "optical_freq_hz": p.optical_omega / TWO_PI,
                "ordinate_s": p.ordinate,
                "ordinate_sigma_s": p.ordinate_sigma,
            }
            for p in resonance_points(runs)
        ]
        if "resonance_freq_hz" in values and len(points) >= 2:
            _render_resonance_figure(staged, values, points)
            produced += ["fig_resonance.csv", "fig_resonance_line.csv", "fig_resonance.png"]

        if datasets_dir.is_dir():
            up, down, echo = _first_run_datasets(datasets_dir, first)
            _render_flip_figure(staged, up, down, flip)
            _render_echo_figure(staged, echo, echo_fit)
            produced += ["fig_flip.csv", "fig_flip.png", "fig_echo.csv", "fig_echo.png"]
            figure_note = f"scan figures show run {first}"

    stamp = FIXED_CLOCK_TOKEN if fixed_clock else datetime.now(timezone.utc).isoformat(timespec="seconds")
    (staged / "report.txt").write_text(_summary_text(values, ledger, per_run, stamp, figure_note))
    _promote(staged, target)
    return [target / name for name in produced]


def _first_run_datasets(datasets_dir: Path, run: int) -> tuple[ShotDataset, ShotDataset, ShotDataset]:
    up = down = echo = None
    for path in sorted(datasets_dir.glob(f"run{run:03d}_*.csv")):
        ds = read_dataset(path)
        if ds.init == "up":
            up = ds
        elif ds.init == "down":
            down = ds
        elif echo is None:
            echo = ds
    if up is None or down is None or echo is None:
        raise ValidationError(f"run {run} datasets are incomplete under {datasets_dir}")
    return up, down, echo
