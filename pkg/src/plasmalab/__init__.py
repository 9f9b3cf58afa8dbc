"""Radial solvers for a nonlocal free-boundary plasma equilibrium problem."""
from .branch import BranchPoint, SweepTrace, find_lambda_plus, newton_solve, sweep
from .config import ConfigError, RunConfig, build_config
from .emden import ProblemParams, critical_exponent, lambda_plus, solve_emden
from .radial import RadialGrid, build_grid, unit_volume_radius

__version__ = "0.1.0"

__all__ = [
    "BranchPoint", "ConfigError", "ProblemParams", "RadialGrid", "RunConfig", "SweepTrace",
    "build_config", "build_grid", "critical_exponent", "find_lambda_plus", "lambda_plus",
    "newton_solve", "solve_emden", "sweep", "unit_volume_radius",
]
