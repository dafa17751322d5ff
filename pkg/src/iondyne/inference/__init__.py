"""Parameter estimation from shot datasets."""

from .echo import fit_echo_scan
from .estimate import PosteriorEstimate, read_estimates, write_estimates
from .mcmc import FLIP_PARAM_NAMES, McmcSettings, PriorConfig, fit_flip_scan, flip_log_likelihood
from .resonance import ResonanceFit, ResonancePoint, fit_resonance

__all__ = [
    "FLIP_PARAM_NAMES",
    "McmcSettings",
    "PosteriorEstimate",
    "PriorConfig",
    "ResonanceFit",
    "ResonancePoint",
    "fit_echo_scan",
    "fit_flip_scan",
    "fit_resonance",
    "flip_log_likelihood",
    "read_estimates",
    "write_estimates",
]
