"""Finite-volume solver for a spatial SEIRD model with nonlinear diffusion."""

from .config import RunConfig, emit_config, load_config, parse_config
from .diagnostics import monitor_energy, stability_probe, verify_bounds
from .elliptic import solve_reaction_diffusion, solve_spd
from .errors import (
    ConfigError,
    ConvergenceError,
    InvariantViolation,
    PreconditionError,
    SeirdError,
    SimulationError,
)
from .grid import Mesh, build_mesh, compute_norm
from .interp import build_interpolants, convergence_study, verify_interpolant_identities
from .kirchhoff import KirchhoffMap, solve_n_step
from .model import ModelParams, Nonlinearity, compute_bounds, validate_tau
from .stepper import Trajectory, run_simulation, simulate

__all__ = [
    "ConfigError", "ConvergenceError", "InvariantViolation", "KirchhoffMap", "Mesh",
    "ModelParams", "Nonlinearity", "PreconditionError", "RunConfig", "SeirdError",
    "SimulationError", "Trajectory", "build_interpolants", "build_mesh", "compute_bounds",
    "compute_norm", "convergence_study", "emit_config", "load_config", "monitor_energy",
    "parse_config", "run_simulation", "simulate", "solve_n_step", "solve_reaction_diffusion",
    "solve_spd", "stability_probe", "validate_tau", "verify_bounds",
    "verify_interpolant_identities",
]
