"""Pathwise integration of Ito SDEs over fixed and adaptive random partitions.

Explicit and implicit Euler-Maruyama steppers driven by three step
controllers: a fixed grid and two bounded-diffusion rules where the step
duration and Brownian increment come from the first exit of (t, W) from a
state-dependent region. Includes the exit-time sampling kernels, empirical
diagnostics of the convergence assumptions, and a reproducible Monte Carlo
experiment harness with CSV/SVG reporting.
"""

from .brownian import BrownianRecord, RngStream, gaussian_increment, record_step
from .errors import (
    ConfigurationError,
    DegenerateNormalizerError,
    ExperimentError,
    NonFiniteInputError,
    OrderingError,
    ParameterError,
    RunawayError,
    SdePathError,
    SolverError,
    StepOverflowError,
    UnsupportedConfigurationError,
    ZeroStepError,
)
from .exit_sampling import (
    Cuboid,
    CuboidExitSample,
    RegionII,
    sample_exit_cuboid,
    sample_exit_single,
    sample_region_ii,
    survival_single,
)
from .experiments import (
    ErrorStats,
    ExperimentConfig,
    RunRow,
    convergence_slope,
    emit_outputs,
    matched_stats,
    relative_error,
    run_experiment,
)
from .model import (
    QMatrix,
    SdeProblem,
    VectorField,
    constant_field,
    diffusion_q_norms,
    eval_q,
    finite_difference_derivatives,
    gbm_exact,
    get_problem,
    linear_field,
    make_gbm_problem,
    problem_keys,
)
from .steppers import (
    StepController,
    Trajectory,
    adaptive1_cuboid,
    em_step,
    implicit_em_step,
    integrate,
    propose_step,
)

__version__ = "0.1.0"

__all__ = [
    "BrownianRecord",
    "ConfigurationError",
    "Cuboid",
    "CuboidExitSample",
    "DegenerateNormalizerError",
    "ErrorStats",
    "ExperimentConfig",
    "ExperimentError",
    "NonFiniteInputError",
    "OrderingError",
    "ParameterError",
    "QMatrix",
    "RegionII",
    "RngStream",
    "RunRow",
    "RunawayError",
    "SdePathError",
    "SdeProblem",
    "SolverError",
    "StepController",
    "StepOverflowError",
    "Trajectory",
    "UnsupportedConfigurationError",
    "VectorField",
    "ZeroStepError",
    "adaptive1_cuboid",
    "constant_field",
    "convergence_slope",
    "diffusion_q_norms",
    "em_step",
    "emit_outputs",
    "eval_q",
    "finite_difference_derivatives",
    "gaussian_increment",
    "gbm_exact",
    "get_problem",
    "implicit_em_step",
    "integrate",
    "linear_field",
    "make_gbm_problem",
    "matched_stats",
    "problem_keys",
    "propose_step",
    "record_step",
    "relative_error",
    "run_experiment",
    "sample_exit_cuboid",
    "sample_exit_single",
    "sample_region_ii",
    "survival_single",
]
