"""Bayesian population-size estimation from successive-sampling data."""

__version__ = "0.1.0"

from .engine import (
    ChainState,
    McmcConfig,
    ObservedSequence,
    PosteriorDraws,
    run_known_N,
    run_unknown_N,
)
from .exceptions import (
    ChainFailure,
    DataFormatError,
    ElicitationError,
    InfeasibleDesignError,
    InfeasibleMomentsError,
    SspsizeError,
    TiltedSamplingError,
    ValidationError,
)
from .priors import DiscreteEtaPrior, EtaPrior, SizePrior, TabulatedSizePrior, beta_from_elicitation
from .sizedist import UnitSizeModel, solve_natural_params
from .ssproc import SizedPopulation, ss_prevalence
from .studylab import StudyDesign, run_replication_study
from .summary import DiscreteSummary, density_table, summarize

__all__ = [
    "ChainFailure",
    "ChainState",
    "DataFormatError",
    "DiscreteEtaPrior",
    "DiscreteSummary",
    "ElicitationError",
    "EtaPrior",
    "InfeasibleDesignError",
    "InfeasibleMomentsError",
    "McmcConfig",
    "ObservedSequence",
    "PosteriorDraws",
    "SizePrior",
    "SizedPopulation",
    "SspsizeError",
    "StudyDesign",
    "TabulatedSizePrior",
    "TiltedSamplingError",
    "UnitSizeModel",
    "ValidationError",
    "beta_from_elicitation",
    "density_table",
    "run_known_N",
    "run_replication_study",
    "run_unknown_N",
    "solve_natural_params",
    "ss_prevalence",
    "summarize",
]
