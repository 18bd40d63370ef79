"""Delaymix - averaged solutions versus averaged models for random-delay equations."""

__version__ = "0.1.0"

# Delay laws, histories, sampling and quadrature
from delaymix.delay_model import (
    ConstantHistory,
    DiscreteDelay,
    ExponentialDelay,
    PiecewiseHistory,
    PolynomialHistory,
    TabulatedDelay,
    UniformDelay,
    cdf,
    discretize,
    pdf,
    quantile,
    sample_delay,
    sample_stream,
    validate,
    validate_history,
)

# Exact method of steps
from delaymix.polyexact import (
    PiecewisePoly,
    WeightedDelays,
    breakpoints,
    evaluate,
    mix,
    solve_exact,
)

# Numerical solver
from delaymix.dde_solver import (
    SolverConfig,
    Trajectory,
    aligned_config,
    eval_dense,
    solve_numeric,
)

# Averaging solutions
from delaymix.ensemble import (
    EnsembleResult,
    MixtureResult,
    SllnResult,
    exact_mixture,
    quadrature_mixture,
    run_ensemble,
    slln_diagnostics,
)

# Averaging models
from delaymix.distributed import (
    DistributedProblem,
    build_distributed,
    solve_distributed,
)

# Comparison
from delaymix.compare import (
    ComparisonReport,
    agreement_check,
    compare,
    operator_residuals,
)

# Configuration
from delaymix.config import RunConfig, dump_config, load_config

__all__ = [
    # Delay laws and histories
    "ConstantHistory",
    "DiscreteDelay",
    "ExponentialDelay",
    "PiecewiseHistory",
    "PolynomialHistory",
    "TabulatedDelay",
    "UniformDelay",
    "cdf",
    "discretize",
    "pdf",
    "quantile",
    "sample_delay",
    "sample_stream",
    "validate",
    "validate_history",
    # Exact solver
    "PiecewisePoly",
    "WeightedDelays",
    "breakpoints",
    "evaluate",
    "mix",
    "solve_exact",
    # Numerical solver
    "SolverConfig",
    "Trajectory",
    "aligned_config",
    "eval_dense",
    "solve_numeric",
    # Ensembles and mixtures
    "EnsembleResult",
    "MixtureResult",
    "SllnResult",
    "exact_mixture",
    "quadrature_mixture",
    "run_ensemble",
    "slln_diagnostics",
    # Distributed equation
    "DistributedProblem",
    "build_distributed",
    "solve_distributed",
    # Comparison
    "ComparisonReport",
    "agreement_check",
    "compare",
    "operator_residuals",
    # Configuration
    "RunConfig",
    "dump_config",
    "load_config",
]
