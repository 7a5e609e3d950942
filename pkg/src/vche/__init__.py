"""Sparse distributed optimal control of the 3D viscous Camassa-Holm flow.

Library layout:

  grids, fields, operators   spectral calculus on the periodic box
  forward                    IMEX state solver (control-to-state map)
  costs, sensitivity         tracking costs, exact discrete derivatives
  sparsity                   the three sparsity functionals and KKT maps
  optimizer                  prox-gradient / fixed-point solvers, 2nd-order probes
  config_io, experiments,    configuration files, kappa experiments, CLI
  cli, benchmark
"""

__version__ = "0.1.0"

from .fields import SpectralField, inner, l2_norm, norms, read_snapshot, write_snapshot
from .forward import (
    ControlField,
    CostKind,
    ProblemConfig,
    SparsityKind,
    Trajectory,
    solve_forward,
)
from .grids import Grid
from .optimizer import Method, OptimalityReport, Problem, SolveOptions, solve

__all__ = [
    "ControlField",
    "CostKind",
    "Grid",
    "Method",
    "OptimalityReport",
    "Problem",
    "ProblemConfig",
    "SolveOptions",
    "SparsityKind",
    "SpectralField",
    "Trajectory",
    "inner",
    "l2_norm",
    "norms",
    "read_snapshot",
    "solve",
    "solve_forward",
    "write_snapshot",
]
