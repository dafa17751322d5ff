"""Campaign stages shared by the CLI and the test suite.

Each stage reads and writes one subdirectory of a campaign output
directory:

    datasets/   simulate: one shot-count file per block
    estimates/  fit: one estimate record per fitted scan
    results/    derive: final quantities plus the audit tables

Stages write into a hidden staging directory first and promote it with
one rename, so a crashed stage never leaves a half-written output tree
behind. A stage refuses to run if its output subdirectory already
exists; outputs are immutable once promoted.
"""

from __future__ import annotations

import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .config import CampaignConfig
from .dataset import ShotDataset, read_dataset
from .derive import CampaignDerivation, RunEstimate, Uncertain, derive_results, derive_from_values
from .errors import ValidationError
from .inference import (
    PosteriorEstimate,
    ResonancePoint,
    fit_echo_scan,
    fit_flip_scan,
    fit_resonance,
    read_estimates,
    write_estimates,
)
from .physics import TWO_PI
from .rng import derive_seed
from .simulate import BLOCKS_PER_RUN, simulate_campaign

DATASETS_DIR = "datasets"
ESTIMATES_DIR = "estimates"
RESULTS_DIR = "results"
REPORT_DIR = "report"

RESULTS_HEADER = "# iondyne-results v1"

_FIT_SEED_TAG = 2


def _stage_dir(out_dir: Path, name: str):
    """Temp directory on the same filesystem as the final target."""
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / name
    if target.exists():
        raise ValidationError(
            f"{target} already exists; stages do not overwrite earlier outputs"
        )
    return target, Path(tempfile.mkdtemp(prefix=f".stage_{name}_", dir=out_dir))


def _promote(staged: Path, target: Path):
    os.replace(staged, target)


def dataset_filename(ds: ShotDataset) -> str:
    run = int(ds.metadata["run_index"])
    block = int(ds.metadata["block_index"])
    kind = "echo" if ds.init == "echo" else f"flip_{ds.init}"
    return f"run{run:03d}_block{block:04d}_{kind}.csv"


def run_simulate(config: CampaignConfig, out_dir: str | Path, seed: int) -> list[Path]:
    """Generate the campaign's datasets into out_dir/datasets."""
    truth = config.require_truth()
    schedule = config.require_schedule()
    spam = config.require_spam()
    signal = config.require_echo_signal()
    fields = {label: fc.field for label, fc in config.fields.items()}
    label_metadata = {
        label: {
            "optical_freq_hz": repr(truth.optical_freq_hz(fc.detuning_ghz)),
            "detuning_sign": f"{fc.detuning_sign:+d}",
        }
        for label, fc in config.fields.items()
    }

    datasets = simulate_campaign(
        schedule=schedule,
        fields=fields,
        decay=truth.decay,
        spam=spam,
        signal=signal,
        seed=seed,
        label_metadata=label_metadata,
        eps_pi_sq_max=config.eps_pi_sq_max,
    )

    out_dir = Path(out_dir)
    target, staged = _stage_dir(out_dir, DATASETS_DIR)
    paths = []
    for ds in datasets:
        path = staged / dataset_filename(ds)
        ds.write(path)
        paths.append(target / path.name)
    _promote(staged, target)
    return paths


@dataclass(frozen=True)
class RunFiles:
    """Dataset paths of one run's four blocks, echo scans in block order."""

    run_index: int
    flip_up: Path
    flip_down: Path
    echo_pre: Path
    echo_post: Path


def discover_runs(out_dir: str | Path) -> list[RunFiles]:
    """Group out_dir/datasets into complete runs, validated."""
    root = Path(out_dir) / DATASETS_DIR
    if not root.is_dir():
        raise ValidationError(f"{root} not found; run simulate first (or place datasets there)")
    by_run: dict[int, dict[str, tuple[int, Path]]] = {}
    for path in sorted(root.glob("*.csv")):
        ds = read_dataset(path)
        try:
            run = int(ds.metadata["run_index"])
            block = int(ds.metadata["block_index"])
        except KeyError as exc:
            raise ValidationError(f"{path} lacks the {exc.args[0]} metadata key") from None
        slots = by_run.setdefault(run, {})
        if ds.init in ("up", "down"):
            key = ds.init
        else:
            key = "echo_pre" if "echo_pre" not in slots else "echo_post"
        if key in slots:
            raise ValidationError(f"run {run} has duplicate {key} datasets")
        slots[key] = (block, path)

    runs = []
    for run in sorted(by_run):
        slots = by_run[run]
        missing = {"up", "down", "echo_pre", "echo_post"} - set(slots)
        if missing:
            raise ValidationError(f"run {run} is missing blocks: {sorted(missing)}")
        pre, post = slots["echo_pre"], slots["echo_post"]
        if pre[0] > post[0]:
            pre, post = post, pre
        runs.append(RunFiles(run_index=run, flip_up=slots["up"][1], flip_down=slots["down"][1],
                             echo_pre=pre[1], echo_post=post[1]))
    if not runs:
        raise ValidationError(f"no datasets found under {root}")
    return runs


def estimate_filename(run_index: int, role: str) -> str:
    return f"run{run_index:03d}_{role}.csv"


def _fit_one_run(args) -> tuple[int, dict[str, PosteriorEstimate]]:
    """Fit one run's three scans. Module-level so worker processes can pickle it."""
    files, priors, settings, seed, min_periods = args
    up = read_dataset(files.flip_up)
    down = read_dataset(files.flip_down)
    shared = {
        key: up.metadata[key]
        for key in ("run_index", "detuning_label", "optical_freq_hz", "detuning_sign")
        if key in up.metadata
    }
    missing = {"optical_freq_hz", "detuning_sign"} - set(shared)
    if missing:
        raise ValidationError(f"run {files.run_index} datasets lack metadata keys {sorted(missing)}")

    flip = fit_flip_scan(up, down, priors=priors, settings=settings,
                         seed=derive_seed(seed, _FIT_SEED_TAG, files.run_index))
    out = {"flip": flip}
    for role, path in (("echo_pre", files.echo_pre), ("echo_post", files.echo_post)):
        out[role] = fit_echo_scan(read_dataset(path), min_periods=min_periods)
    for role, est in out.items():
        meta = dict(est.metadata)
        meta.update(shared)
        meta["role"] = role
        out[role] = PosteriorEstimate(
            params=est.params, median=est.median, ci68_lo=est.ci68_lo, ci68_hi=est.ci68_hi,
            rhat=est.rhat, acceptance_rate=est.acceptance_rate, converged=est.converged,
            samples=None, metadata=meta,
        )
    return files.run_index, out


def run_fit(config: CampaignConfig, out_dir: str | Path, seed: int, threads: int = 1) -> list[Path]:
    """Fit every run's scans, writing records into out_dir/estimates."""
    out_dir = Path(out_dir)
    runs = discover_runs(out_dir)
    jobs = [(files, config.priors, config.mcmc, seed, config.min_echo_periods) for files in runs]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(_fit_one_run, jobs))
    else:
        fitted = [_fit_one_run(job) for job in jobs]

    target, staged = _stage_dir(out_dir, ESTIMATES_DIR)
    paths = []
    for run_index, estimates in fitted:
        for role, est in estimates.items():
            path = staged / estimate_filename(run_index, role)
            write_estimates(est, path)
            paths.append(target / path.name)
    _promote(staged, target)
    return paths


def load_run_estimates(out_dir: str | Path) -> list[RunEstimate]:
    """Assemble derive inputs from the records under out_dir/estimates.

    The two echo fits bracketing a run's flip scans average into one
    light-shift value; under a linear intensity drift the average lands
    on the mid-run intensity the flip scans saw.
    """
    root = Path(out_dir) / ESTIMATES_DIR
    if not root.is_dir():
        raise ValidationError(f"{root} not found; run fit first")

    by_run: dict[int, dict[str, PosteriorEstimate]] = {}
    for path in sorted(root.glob("*.csv")):
        est = read_estimates(path)
        try:
            run = int(est.metadata["run_index"])
            role = est.metadata["role"]
        except KeyError as exc:
            raise ValidationError(f"{path} lacks the {exc.args[0]} metadata key") from None
        by_run.setdefault(run, {})[role] = est

    runs = []
    for run in sorted(by_run):
        roles = by_run[run]
        missing = {"flip", "echo_pre", "echo_post"} - set(roles)
        if missing:
            raise ValidationError(f"run {run} is missing estimate records: {sorted(missing)}")
        flip = roles["flip"]
        stark_values = [roles[r].value("stark") for r in ("echo_pre", "echo_post")]
        stark_sigmas = [roles[r].sigma("stark") for r in ("echo_pre", "echo_post")]
        converged = all(roles[r].converged for r in roles)
        runs.append(RunEstimate(
            run_index=run,
            label=flip.metadata.get("detuning_label", f"run{run}"),
            optical_omega=TWO_PI * float(flip.metadata["optical_freq_hz"]),
            detuning_sign=int(flip.metadata["detuning_sign"]),
            delta_r=Uncertain(abs(flip.value("delta_r")), flip.sigma("delta_r")),
            stark=Uncertain(0.5 * math.fsum(stark_values), 0.5 * math.hypot(*stark_sigmas)),
            leak_b=Uncertain(flip.value("leak_b"), flip.sigma("leak_b")),
            converged=converged,
        ))
    return runs


def resonance_points(runs: list[RunEstimate]) -> list[ResonancePoint]:
    return [
        ResonancePoint(
            optical_omega=r.optical_omega,
            stark=r.stark.value,
            stark_sigma=r.stark.sigma,
            delta_r=r.delta_r.value,
            delta_r_sigma=r.delta_r.sigma,
            detuning_sign=r.detuning_sign,
        )
        for r in runs
    ]


def derive_campaign(config: CampaignConfig, out_dir: str | Path,
                    allow_unconverged: bool = False) -> CampaignDerivation:
    """Derive final quantities from fitted estimates (in memory)."""
    runs = load_run_estimates(out_dir)
    resonance = fit_resonance(resonance_points(runs))
    return derive_results(runs, resonance, config.ledger, config.constants,
                          allow_unconverged=allow_unconverged)


def _format_results(derivation: CampaignDerivation) -> str:
    """Final quantities as a constants-style table, one value per line."""
    final = derivation.final
    rows = [
        ("gamma_ps", final.gamma_ps.value, "rad/s"),
        ("gamma_ps_sigma", final.gamma_ps.sigma, "rad/s"),
        ("gamma_ps_2pi_mhz", final.gamma_ps.value / TWO_PI / 1e6, "MHz"),
        ("gamma_ps_2pi_mhz_sigma", final.gamma_ps.sigma / TWO_PI / 1e6, "MHz"),
        ("gamma_pd", final.gamma_pd.value, "rad/s"),
        ("gamma_pd_sigma", final.gamma_pd.sigma, "rad/s"),
        ("leak_b", final.leak_b.value, "dimensionless"),
        ("leak_b_sigma", final.leak_b.sigma, "dimensionless"),
        ("branching_fraction", final.branching_fraction.value, "dimensionless"),
        ("branching_fraction_sigma", final.branching_fraction.sigma, "dimensionless"),
        ("lifetime", final.lifetime.value, "s"),
        ("lifetime_sigma", final.lifetime.sigma, "s"),
        ("d_reduced", final.d_reduced.value, "e*a0"),
        ("d_reduced_sigma", final.d_reduced.sigma, "e*a0"),
        ("d_partner", final.d_partner.value, "e*a0"),
        ("d_partner_sigma", final.d_partner.sigma, "e*a0"),
        ("raw_gamma_ps", derivation.raw_gamma_ps.value, "rad/s"),
        ("raw_gamma_ps_sigma", derivation.raw_gamma_ps.sigma, "rad/s"),
        ("stat_rel", derivation.stat_rel, "relative"),
        ("resonance_rel", derivation.resonance_rel, "relative"),
        ("ledger_shift_rel", derivation.ledger.total_shift_rel, "relative"),
        ("ledger_unc_rel", derivation.ledger.total_unc_rel, "relative"),
        ("n_runs", float(len(derivation.per_run)), "count"),
    ]
    if derivation.resonance is not None:
        res = derivation.resonance
        rows += [
            ("resonance_freq_hz", res.zero_crossing / TWO_PI, "Hz"),
            ("resonance_freq_sigma_hz", res.zero_crossing_sigma / TWO_PI, "Hz"),
            ("resonance_slope", res.slope, "s"),
        ]
    lines = [RESULTS_HEADER]
    lines += [f"{name} = {value!r} # {unit}" for name, value, unit in rows]
    return "\n".join(lines) + "\n"


def write_derivation(derivation: CampaignDerivation, out_dir: str | Path) -> list[Path]:
    """Persist derive outputs under out_dir/results."""
    out_dir = Path(out_dir)
    target, staged = _stage_dir(out_dir, RESULTS_DIR)
    (staged / "summary.txt").write_text(_format_results(derivation))
    derivation.ledger.to_csv(staged / "budget.csv")
    table = ["run_index,label,detuning_rad_s,gamma_ps_rad_s,gamma_ps_sigma_rad_s"]
    table += [
        f"{g.run_index},{g.label},{g.detuning!r},{g.gamma_ps.value!r},{g.gamma_ps.sigma!r}"
        for g in derivation.per_run
    ]
    (staged / "per_run.csv").write_text("\n".join(table) + "\n")
    _promote(staged, target)
    return [target / name for name in ("summary.txt", "budget.csv", "per_run.csv")]


def run_derive(config: CampaignConfig, out_dir: str | Path,
               allow_unconverged: bool = False) -> CampaignDerivation:
    """Derive stage: campaign estimates when present, direct inputs otherwise."""
    out_dir = Path(out_dir)
    if (out_dir / ESTIMATES_DIR).is_dir():
        derivation = derive_campaign(config, out_dir, allow_unconverged=allow_unconverged)
    else:
        direct = config.require_direct()
        derivation = derive_from_values(
            gamma_ps=direct.gamma_ps,
            leak_b=direct.leak_b,
            ledger=config.ledger,
            constants=config.constants,
            apply_ledger=direct.apply_ledger,
        )
    write_derivation(derivation, out_dir)
    return derivation


def read_results(path: str | Path) -> dict[str, float]:
    """Parse a results summary table back into a name -> value map."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != RESULTS_HEADER:
        raise ValidationError(f"{path}: first line must be {RESULTS_HEADER!r}")
    values: dict[str, float] = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        body = line.split("#", 1)[0]
        name, _, value = body.partition("=")
        values[name.strip()] = float(value)
    return values
