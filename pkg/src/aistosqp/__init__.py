"""Adaptive inexact stochastic SQP for equality-constrained stochastic optimization."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .inference import (
    ConfidenceQuery,
    CovarianceAccumulator,
    confidence_interval,
    covariance_estimate,
    exact_covariance_oracle,
    normality_diagnostics,
    update_moments,
)
from .kkt import HessianAverager, KktSystem, assemble_kkt, nullspace_basis, regularize
from .problems import (
    NoiseModel,
    ProblemSpec,
    builtin_problem,
    check_derivatives,
    eval_kkt_residual,
    list_problems,
    sample_gradient,
    sample_lagrangian_hessian,
)
from .sketch import SketchDistribution, contraction_audit, sketch_project_step, solve_exact, solve_inexact
from .solver import (
    MeritParams,
    RunState,
    SolverConfig,
    TraceRow,
    deterministic_sqp_oracle,
    merit_gradient,
    merit_value,
    run,
    step,
)
from .stepsize import Schedule, StepPolicy, draw_stepsize, envelope, validate_schedule
