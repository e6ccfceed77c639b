"""Maximum-likelihood estimation of two-dimensional MTP2 distributions.

The estimator maximises the multinomial likelihood over PMFs whose
logarithm is supermodular, using a proximal Newton outer loop whose steps
are weighted projections computed by Dykstra's algorithm.
"""

from .errors import (
    CoordinateOutOfRange,
    DegenerateRegression,
    DimensionMismatch,
    InvalidParameters,
    MTP2Error,
    NonPositiveEntry,
    NotConverged,
    QuadratureFailure,
    SizeLimit,
    SupportViolation,
    ZeroCount,
)
from .grid import (
    CountGrid,
    LogPmfGrid,
    MinorReport,
    PmfGrid,
    corner_ratio_log,
    empirical_pmf,
    feasibility_gap,
    hellinger_sq,
    is_mtp2,
    is_supermodular,
    kl,
    normalize_log,
)
from .projection import (
    BoxBounds,
    DykstraState,
    ProjectionOptions,
    dykstra_project,
    harmonic_weights,
    oracle_project,
    project_box,
    project_cell,
)
from .solver import FitResult, SolverOptions, Variant, build_box, fit_mle, newton_step, objective
from .density import (
    AnalyticDensity,
    PiecewiseConstantDensity,
    cell_average_density,
    fit_density,
    hellinger_sq_continuous,
    hellinger_sq_pc,
    histogram,
    select_grid_size,
)
from .synth import (
    SeededRng,
    TruncatedGaussianSpec,
    make_supermodular_pmf,
    sample_multinomial,
    sample_truncated_gaussian,
    truncated_gaussian_density,
    validate_mtp2_generator,
)

__version__ = "0.1.0"

__all__ = [
    "AnalyticDensity",
    "BoxBounds",
    "build_box",
    "cell_average_density",
    "CoordinateOutOfRange",
    "corner_ratio_log",
    "CountGrid",
    "DegenerateRegression",
    "DimensionMismatch",
    "dykstra_project",
    "DykstraState",
    "empirical_pmf",
    "feasibility_gap",
    "fit_density",
    "fit_mle",
    "FitResult",
    "harmonic_weights",
    "hellinger_sq",
    "hellinger_sq_continuous",
    "hellinger_sq_pc",
    "histogram",
    "InvalidParameters",
    "is_mtp2",
    "is_supermodular",
    "kl",
    "LogPmfGrid",
    "make_supermodular_pmf",
    "MinorReport",
    "MTP2Error",
    "newton_step",
    "NonPositiveEntry",
    "normalize_log",
    "NotConverged",
    "objective",
    "oracle_project",
    "PiecewiseConstantDensity",
    "PmfGrid",
    "project_box",
    "project_cell",
    "ProjectionOptions",
    "QuadratureFailure",
    "sample_multinomial",
    "sample_truncated_gaussian",
    "SeededRng",
    "select_grid_size",
    "SizeLimit",
    "SolverOptions",
    "SupportViolation",
    "truncated_gaussian_density",
    "TruncatedGaussianSpec",
    "validate_mtp2_generator",
    "Variant",
    "ZeroCount",
]
