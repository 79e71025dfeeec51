"""Anti-bunched light from squeezed coherent states: Fock-space model,
photon-stream simulation and time-tagger analysis."""

from . import errors
from .config import AnalysisConfig, RunConfig, SweepConfig, config_from_dict, load_config
from .fock import (
    FockVector,
    RateParams,
    SqueezedCoherentParams,
    TwoModeState,
    coherent_state,
    g2_of_state,
    match_alpha,
    path_entangled_state,
    perturbative_coeffs,
    rate_law,
    squeeze_apply,
    squeezed_coherent_state,
    two_mode_coincidence_prob,
)
from .streams import DetectorModel, SourceConfig, TagStream, phase_trajectory, simulate
from .tagfile import read_tags, write_tags
from .tagger import (
    CorrelationHistogram,
    G2Curve,
    car,
    cross_correlate,
    fit_gaussian_dip,
    fit_gaussian_peak,
    normalize_g2,
    singles_rates,
)

__version__ = "0.1.0"
