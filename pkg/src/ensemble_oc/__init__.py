"""Optimal control of ensembles of affine-control systems with one shared control."""
from .control import PiecewiseControl, TimeGrid, axpy, l2_inner, project_pm
from .errors import CapabilityError, ConfigError, DimensionError, DivergenceError, EnsembleError
from .gradient import assemble_gradient, fd_gradient
from .integrator import integrate_adjoint, integrate_forward, weak_convergence_probe
from .lq import kalman_rank, solve_lq
from .measures import Beta44Law, DiscreteMeasure, explicit_measure, quantile_quadrature, sample_empirical
from .objective import endpoint_cost, running_cost
from .optimizers import OptimizerConfig, pmp_residual, run_iterative_pmp, run_projected_gradient
from .problems import EnsembleProblem, LinearEnsembleProblem, LogisticProblem, builtin_problem, linear2d

__all__ = [
    "PiecewiseControl", "TimeGrid", "axpy", "l2_inner", "project_pm",
    "CapabilityError", "ConfigError", "DimensionError", "DivergenceError", "EnsembleError",
    "assemble_gradient", "fd_gradient",
    "integrate_adjoint", "integrate_forward", "weak_convergence_probe",
    "kalman_rank", "solve_lq",
    "Beta44Law", "DiscreteMeasure", "explicit_measure", "quantile_quadrature", "sample_empirical",
    "endpoint_cost", "running_cost",
    "OptimizerConfig", "pmp_residual", "run_iterative_pmp", "run_projected_gradient",
    "EnsembleProblem", "LinearEnsembleProblem", "LogisticProblem", "builtin_problem", "linear2d",
]
