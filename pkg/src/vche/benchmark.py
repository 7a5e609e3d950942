"""Canonical desk-scale instances and target/initial-state recipes.

The repo's benchmark: 8^3 grid, M = 16 steps on [0, 1], nu = 0.5,
alpha = 0.25, gamma = 1e-2, quadratic tracking toward a fixed two-mode
divergence-free target, box bounds [-1, 1]^3.  Strong dissipation on a
coarse grid keeps every solve fast and well-conditioned; the target
amplitude is chosen so the unconstrained reference control stays interior
to the box (the regime in which the kappa-stability rates are clean).
"""

from __future__ import annotations

import numpy as np

from .costs import CostFunctional, constant_target
from .fields import SpectralField
from .forward import ControlField, CostKind, ProblemConfig, SparsityKind, solve_forward
from .grids import Grid
from .operators import project_physical
from .optimizer import Problem

BENCHMARK_TARGET_AMPLITUDE = 0.05


def two_mode_field(grid: Grid, amplitude: float) -> SpectralField:
    """Taylor-Green pattern plus a transverse shear; divergence-free."""
    x, y, z = grid.mesh()
    vals = np.stack(
        [
            np.sin(x) * np.cos(y) * np.cos(z),
            -np.cos(x) * np.sin(y) * np.cos(z) + 0.3 * np.cos(z),
            0.3 * np.sin(x),
        ]
    )
    return project_physical(grid, amplitude * vals)


def make_field(grid: Grid, recipe: str, amplitude: float) -> SpectralField:
    if recipe == "zero":
        return SpectralField.zeros(grid)
    if recipe == "two_mode":
        return two_mode_field(grid, amplitude)
    raise ValueError(f"unknown field recipe '{recipe}'")


def benchmark_config(
    sparsity: SparsityKind = SparsityKind.J1,
    kappa: float = 0.0,
    dims: tuple[int, int, int] = (8, 8, 8),
    steps: int = 16,
) -> ProblemConfig:
    return ProblemConfig(
        grid=Grid(dims),
        t_final=1.0,
        steps=steps,
        viscosity=0.5,
        alpha=0.25,
        gamma=1e-2,
        kappa=kappa,
        bounds_lo=(-1.0, -1.0, -1.0),
        bounds_hi=(1.0, 1.0, 1.0),
        sparsity=sparsity,
        cost_kind=CostKind.QUADRATIC_TRACKING,
        cost_weight=1.0,
    )


def make_problem(
    cfg: ProblemConfig,
    target_recipe: str = "two_mode",
    target_amplitude: float = BENCHMARK_TARGET_AMPLITUDE,
    initial_recipe: str = "zero",
    initial_amplitude: float | None = None,
) -> Problem:
    target = make_field(cfg.grid, target_recipe, target_amplitude)
    amp0 = target_amplitude if initial_amplitude is None else initial_amplitude
    if initial_recipe == "target":
        y0 = target.copy()
    else:
        y0 = make_field(cfg.grid, initial_recipe, amp0)
    cost = CostFunctional(cfg.cost_kind, constant_target(cfg, target), cfg.cost_weight)
    return Problem(cfg, cost, y0)


def benchmark_problem(
    sparsity: SparsityKind = SparsityKind.J1,
    kappa: float = 0.0,
    target_amplitude: float = BENCHMARK_TARGET_AMPLITUDE,
    **cfg_overrides,
) -> Problem:
    cfg = benchmark_config(sparsity=sparsity, kappa=kappa, **cfg_overrides)
    return make_problem(cfg, target_amplitude=target_amplitude)


def self_tracking_problem(cfg: ProblemConfig) -> Problem:
    """Target equal to the uncontrolled trajectory: zero control is optimal."""
    y0 = two_mode_field(cfg.grid, BENCHMARK_TARGET_AMPLITUDE)
    traj = solve_forward(ControlField.zeros(cfg), y0, cfg)
    cost = CostFunctional(cfg.cost_kind, [s.copy() for s in traj.states], cfg.cost_weight)
    return Problem(cfg, cost, y0)
