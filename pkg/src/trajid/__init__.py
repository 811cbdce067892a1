"""Subject identification from 3D center-out transport trajectories."""

__version__ = "0.1.0"

from .errors import DataError, DivergenceError
from .ingest import Catalog, Trial, load_catalog, validate_trial
from .syngen import (
    DEFAULT_LAYOUT,
    SubjectSignature,
    TaskLayout,
    minimum_jerk_profile,
    synth_catalog,
    synth_trial,
)
from .dsp import (
    FilterSpec,
    NormStats,
    SosChain,
    WindowSet,
    compute_norm_stats,
    design_butterworth,
    evaluate_response,
    filter_trial,
    preprocess,
    window_trial,
)

__all__ = [
    "Catalog",
    "DataError",
    "DivergenceError",
    "DEFAULT_LAYOUT",
    "FilterSpec",
    "NormStats",
    "SosChain",
    "SubjectSignature",
    "TaskLayout",
    "Trial",
    "WindowSet",
    "compute_norm_stats",
    "design_butterworth",
    "evaluate_response",
    "filter_trial",
    "load_catalog",
    "minimum_jerk_profile",
    "preprocess",
    "synth_catalog",
    "synth_trial",
    "validate_trial",
    "window_trial",
]
