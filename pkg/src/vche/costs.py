"""Tracking-type cost functionals g and the smooth objective.

Two concrete kinds:

  * quadratic tracking   g(t, y) = (w/2) |y - y_Q(t)|^2,
  * gradient tracking    g(t, y) = w |grad(y - y_d)(t)|^2,

with Riesz representatives (Leray-projected)

  * g'_y = w P (y - y_Q)          g''[z] = w z
  * g'_y = 2 w A P (y - y_d)      g''[z] = 2 w A z.

Both are squared-norm forms, so g''(z, z) >= 0 by construction.  The time
integral of g is discretized by the right-endpoint rule over the step
intervals (the node t_0 carries fixed data); the Tikhonov term uses the same
left-endpoint rule as the forward control pairing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import GridMismatchError
from .fields import SpectralField, inner, norms
from .forward import ControlField, CostKind, ProblemConfig, Trajectory, control_inner
from .operators import apply_stokes, project


@dataclass
class CostFunctional:
    """Cost kind plus the desired state sampled at the M+1 time nodes."""

    kind: CostKind
    target: list  # SpectralField per node, length steps + 1
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError("tracking weight must be >= 0")
        if not self.target:
            raise ValueError("target trajectory is empty")

    def check_compatible(self, cfg: ProblemConfig) -> None:
        if len(self.target) != cfg.steps + 1:
            raise GridMismatchError(
                f"target has {len(self.target)} nodes, config wants {cfg.steps + 1}"
            )
        for f in self.target:
            if not f.grid.same_as(cfg.grid):
                raise GridMismatchError("target grid differs from the config grid")

    # -- pointwise-in-time pieces -------------------------------------------

    def value(self, m: int, y: SpectralField) -> float:
        diff = y - self.target[m]
        if self.kind is CostKind.QUADRATIC_TRACKING:
            return 0.5 * self.weight * inner(diff, diff)
        return self.weight * norms(diff)["h1"] ** 2

    def grad(self, m: int, y: SpectralField) -> SpectralField:
        diff = project(y - self.target[m])
        if self.kind is CostKind.QUADRATIC_TRACKING:
            return self.weight * diff
        return 2.0 * self.weight * apply_stokes(diff, 1.0)

    def hess_apply(self, m: int, z: SpectralField) -> SpectralField:
        if self.kind is CostKind.QUADRATIC_TRACKING:
            return self.weight * z
        return 2.0 * self.weight * apply_stokes(z, 1.0)


def constant_target(cfg: ProblemConfig, f: SpectralField) -> list:
    return [f.copy() for _ in range(cfg.steps + 1)]


def tracking_value(traj: Trajectory, cost: CostFunctional) -> float:
    """dt * sum_{m=1..M} g(t_m, y_m)."""
    return traj.dt * sum(
        cost.value(m, traj.states[m]) for m in range(1, len(traj.states))
    )


def cost_eval(
    traj: Trajectory, u: ControlField, cost: CostFunctional, cfg: ProblemConfig
) -> float:
    """Smooth objective: int g(t, y) dt + (gamma/2) ||u||^2_{L2(Q)}."""
    if u.steps != cfg.steps:
        raise GridMismatchError("control and config disagree on the number of steps")
    cost.check_compatible(cfg)
    return tracking_value(traj, cost) + 0.5 * cfg.gamma * control_inner(u, u)


def cost_parts(
    traj: Trajectory, u: ControlField, cost: CostFunctional, cfg: ProblemConfig
) -> dict:
    return {
        "tracking": tracking_value(traj, cost),
        "tikhonov": 0.5 * cfg.gamma * control_inner(u, u),
    }
