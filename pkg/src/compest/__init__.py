"""Low-rank estimation of microbiome compositions from count tables."""
from .core import (
    CompositionMatrix,
    CountMatrix,
    RowWeights,
    SimplexBounds,
    validate_composition,
    validate_counts,
)
from .estimators import (
    NaiveMLE,
    NuclearNormComposition,
    SVTComposition,
    ZeroReplacement,
    default_lambda,
    estimate_mle,
    estimate_svt,
    estimate_zero_replacement,
)
from .exceptions import (
    CompestError,
    ConfigError,
    DomainError,
    GenerationError,
    NumericalError,
    ValidationError,
)
from .projection import project_matrix, project_row
from .solver import FitReport, SolverConfig, fit
from .tuning import NuclearNormCompositionCV, make_cv_plan, select_tuning

__version__ = "0.1.0"

__all__ = [
    "CompositionMatrix", "CountMatrix", "RowWeights", "SimplexBounds",
    "validate_composition", "validate_counts",
    "NaiveMLE", "NuclearNormComposition", "NuclearNormCompositionCV",
    "SVTComposition", "ZeroReplacement",
    "default_lambda", "estimate_mle", "estimate_svt", "estimate_zero_replacement",
    "CompestError", "ConfigError", "DomainError", "GenerationError",
    "NumericalError", "ValidationError",
    "project_matrix", "project_row", "FitReport", "SolverConfig", "fit",
    "make_cv_plan", "select_tuning",
]
