"""Learned and geometric multigrid solvers for convection-diffusion on structured grids."""
from . import _backend as backend
from .autodiff import ParamStore, Tape, grad_check
from .classical_mg import (IterationReport, gmg_levels_for_grid, gmg_setup, gmg_solve,
                           stationary_solve, v_cycle, weighted_jacobi)
from .datasets import parse_distribution, sample_coefficients, sample_random_tensor
from .discretization import ProblemSpec, apply_operator, coef_from_random, residual
from .learned import LearnedSolver, SolverWeights, init_weights, level_for_grid, setup, solve_apply
from .training import TrainConfig, train
from .weights_io import load_weights, save_weights

__version__ = "0.1.0"

__all__ = [
    "backend", "ParamStore", "Tape", "grad_check", "IterationReport", "gmg_levels_for_grid",
    "gmg_setup", "gmg_solve", "stationary_solve", "v_cycle", "weighted_jacobi",
    "parse_distribution", "sample_coefficients", "sample_random_tensor", "ProblemSpec",
    "apply_operator", "coef_from_random", "residual", "LearnedSolver", "SolverWeights",
    "init_weights", "level_for_grid", "setup", "solve_apply", "TrainConfig", "train",
    "load_weights", "save_weights",
]
