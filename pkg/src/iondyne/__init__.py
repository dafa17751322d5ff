"""Dispersive and absorptive decay-rate metrology for trapped ions.

The package simulates and analyzes paired measurement campaigns on a
laser-driven ion: spin-echo scans read the ac Stark shift of a qubit
(dispersive), spin-flip scans read the Raman scattering rates between
the qubit states (absorptive), and their ratio closes into the radiative
decay rate of the driven transition without knowing the laser intensity.
Downstream of the decay rate come the excited-state lifetime, the
branching fraction, and the reduced dipole matrix element.
"""

from .constants import DEFAULT_TABLE, PhysicalConstantsTable, load_constants
from .config import CampaignConfig, load_config
from .dataset import ShotDataset, read_dataset
from .derive import (
    CampaignDerivation,
    CorrectionLedger,
    FinalResults,
    LedgerRow,
    RunEstimate,
    Uncertain,
    derive_from_values,
    derive_results,
    leak_from_branching,
    propagate_uncertainty,
)
from .dynamics import (
    DynamicsParams,
    PopulationState,
    evolve_analytic,
    evolve_numeric,
    spin_echo_signal,
    spin_populations,
)
from .errors import (
    ConfigError,
    DatasetFormatError,
    DomainError,
    FitError,
    FrequencyAmbiguityError,
    IntegrationError,
    IondyneError,
    SignConsistencyError,
    ValidationError,
)
from .inference import (
    McmcSettings,
    PosteriorEstimate,
    PriorConfig,
    ResonanceFit,
    ResonancePoint,
    fit_echo_scan,
    fit_flip_scan,
    fit_resonance,
    read_estimates,
    write_estimates,
)
from .physics import (
    DecayConstants,
    LaserField,
    RatePair,
    closure_gamma_ps,
    leak_rates,
    matrix_element,
    spin_flip_rates,
    stark_shift,
)
from .pipeline import run_derive, run_fit, run_simulate
from .report import run_report
from .rng import derive_seed, fold_path, substream
from .simulate import (
    EchoSignalParams,
    RunSchedule,
    ScanPlan,
    SpamModel,
    simulate_campaign,
    simulate_echo_scan,
    simulate_flip_scan,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
