"""Noise-tolerant Byrd-Omojokun trust-region SQP for equality-constrained problems."""

from .harness import (
    ConfigError,
    ExperimentSpec,
    RunResult,
    RunSummary,
    emit_trace,
    read_trace,
    run_experiment,
    scenario,
)
from .invariants import check_trace
from .noise import EvaluationFault, NoiseSpec, NoisyOracle
from .problems import NlpProblem, builtin_names, builtin_problem, check_derivatives, quad_lin
from .solver import (
    IterationRecord,
    PenaltyOverflow,
    SolverConfig,
    SolverResult,
    SolverState,
    StepDecomposition,
    run_solver,
    solver_step,
)
from .subproblems import null_space_basis, solve_normal_tr, solve_tangential_tr

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EvaluationFault",
    "ExperimentSpec",
    "IterationRecord",
    "NlpProblem",
    "NoiseSpec",
    "NoisyOracle",
    "PenaltyOverflow",
    "RunResult",
    "RunSummary",
    "SolverConfig",
    "SolverResult",
    "SolverState",
    "StepDecomposition",
    "builtin_names",
    "builtin_problem",
    "check_derivatives",
    "check_trace",
    "emit_trace",
    "null_space_basis",
    "quad_lin",
    "read_trace",
    "run_experiment",
    "run_solver",
    "scenario",
    "solve_normal_tr",
    "solve_tangential_tr",
    "solver_step",
]
