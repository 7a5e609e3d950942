"""Exact discrete derivatives of the control-to-state map and of the smooth cost.

Everything here is the algebraic derivative (or transpose) of the IMEX
recursion in forward.py, not a separate discretization:

  * solve_linearized : z = S'(u) k, the tangent recursion,
  * solve_second     : m = S''(u)(k1, k2), same operator, driven by
                       -[Bt(z1, F z2) + Bt(z2, F z1)],
  * solve_adjoint    : backward sweep with the exact transpose step,
  * reduced gradient : gamma u + lambda on the control nodes,
  * hessian_vec      : forward-over-adjoint product plus the quadratic-form
                       scalar assembled from z and m.

Consequently the duality pairing and the finite-difference gradient checks
hold to roundoff; agreement with the continuous adjoint system is a
refinement property, verified in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .costs import CostFunctional
from .exceptions import GridMismatchError
from .fields import SpectralField, inner
from .forward import (
    ControlField,
    ProblemConfig,
    Trajectory,
    control_inner,
    values_inner,
    values_norm,
)
from .operators import (
    helmholtz_symbol,
    linearized_rhs,
    linearized_rhs_adjoint,
    project_physical,
)


@dataclass
class AdjointTrajectory:
    """Costates per time node; costates[m] acts on the control interval m.

    The terminal node M is identically zero (lambda(T) = 0; equivalently
    F lambda(T) = 0 since the filter is invertible).
    """

    costates: list
    config: ProblemConfig

    @property
    def terminal_index(self) -> int:
        return len(self.costates) - 1

    def interval_physical(self) -> np.ndarray:
        """Physical costate values on the M control intervals, (M, 3, n1, n2, n3)."""
        return np.stack([lam.to_physical() for lam in self.costates[:-1]])


def _step_symbols(cfg: ProblemConfig):
    f_sym = helmholtz_symbol(cfg.grid, cfg.alpha).symbol
    inv_sym = 1.0 / (f_sym * (1.0 + cfg.dt * cfg.viscosity * cfg.grid.k_squared))
    return f_sym, inv_sym


def _check_base(base: Trajectory, cfg: ProblemConfig) -> None:
    if base.steps != cfg.steps or not base.config.grid.same_as(cfg.grid):
        raise GridMismatchError("base trajectory does not match the config")


def _tangent_sweep(base: Trajectory, rhs, cfg: ProblemConfig) -> Trajectory:
    """Shared linear recursion: z_{m+1} = D [F z_m - dt dBt(y_m) z_m + dt rhs_m]."""
    grid = cfg.grid
    f_sym, inv_sym = _step_symbols(cfg)
    dt = cfg.dt
    z = SpectralField.zeros(grid)
    states = [z]
    for m in range(cfg.steps):
        lin = linearized_rhs(base.states[m], z, cfg.alpha)
        new = inv_sym * (f_sym * z.coeffs - dt * lin.coeffs + dt * rhs(m).coeffs)
        z = SpectralField(grid, new)
        states.append(z)
    return Trajectory(states, dt, cfg)


def solve_linearized(base: Trajectory, k: ControlField, cfg: ProblemConfig) -> Trajectory:
    """Tangent state z = S'(u) k with z(0) = 0."""
    _check_base(base, cfg)
    if k.steps != cfg.steps:
        raise GridMismatchError("direction control has the wrong number of slices")
    rhs_fields = [project_physical(cfg.grid, k.values[m]) for m in range(cfg.steps)]
    return _tangent_sweep(base, lambda m: rhs_fields[m], cfg)


def solve_second(
    base: Trajectory, z1: Trajectory, z2: Trajectory, cfg: ProblemConfig
) -> Trajectory:
    """Second-derivative state S''(u)(k1, k2); symmetric in (z1, z2)."""
    _check_base(base, cfg)
    if z1.steps != cfg.steps or z2.steps != cfg.steps:
        raise GridMismatchError("tangent trajectories do not match the config")
    from .operators import btilde, helmholtz

    def rhs(m):
        a = btilde(z1.states[m], helmholtz(z2.states[m], cfg.alpha))
        b = btilde(z2.states[m], helmholtz(z1.states[m], cfg.alpha))
        return -(a + b)

    return _tangent_sweep(base, rhs, cfg)


def solve_adjoint(
    base: Trajectory, cost: CostFunctional, cfg: ProblemConfig
) -> AdjointTrajectory:
    """Backward sweep with the exact transpose of the tangent step.

    The interval costates satisfy the backward IMEX discretization of

        -d/dt(F lam) + nu A (F lam) + dBt(y)^* lam = g'_y,   lam(T) = 0,

    and the duality identity  <S'(u) k, g'_y>_sum = <k, lam>_sum  holds to
    roundoff by construction.
    """
    _check_base(base, cfg)
    cost.check_compatible(cfg)
    grid = cfg.grid
    f_sym, inv_sym = _step_symbols(cfg)
    dt = cfg.dt
    M = cfg.steps
    costates = [None] * (M + 1)
    costates[M] = SpectralField.zeros(grid)
    q = dt * cost.grad(M, base.states[M])
    for m in range(M - 1, -1, -1):
        lam = SpectralField(grid, inv_sym * q.coeffs)
        costates[m] = lam
        if m >= 1:
            adj = linearized_rhs_adjoint(base.states[m], lam, cfg.alpha)
            q = dt * cost.grad(m, base.states[m]) + SpectralField(
                grid, f_sym * lam.coeffs - dt * adj.coeffs
            )
    return AdjointTrajectory(costates, cfg)


# -- reduced objective ------------------------------------------------------------


@dataclass
class SmoothEvaluation:
    """One forward + one backward sweep: cost, gradient and the reusable pieces."""

    cost: float
    tracking: float
    tikhonov: float
    gradient: np.ndarray  # (M, 3, n1, n2, n3) physical values
    lambda_phys: np.ndarray
    trajectory: Trajectory
    adjoint: AdjointTrajectory


def evaluate_smooth(
    u: ControlField,
    y0: SpectralField,
    cost: CostFunctional,
    cfg: ProblemConfig,
    traj: Trajectory | None = None,
) -> SmoothEvaluation:
    from .costs import cost_parts
    from .forward import solve_forward

    if traj is None:
        traj = solve_forward(u, y0, cfg)
    adj = solve_adjoint(traj, cost, cfg)
    lam = adj.interval_physical()
    parts = cost_parts(traj, u, cost, cfg)
    return SmoothEvaluation(
        cost=parts["tracking"] + parts["tikhonov"],
        tracking=parts["tracking"],
        tikhonov=parts["tikhonov"],
        gradient=cfg.gamma * u.values + lam,
        lambda_phys=lam,
        trajectory=traj,
        adjoint=adj,
    )


def reduced_gradient(
    u: ControlField, y0: SpectralField, cost: CostFunctional, cfg: ProblemConfig
) -> ControlField:
    """gamma u + lambda on the control nodes (exact discrete gradient)."""
    ev = evaluate_smooth(u, y0, cost, cfg)
    return u.with_values(ev.gradient)


def hessian_vec(
    u: ControlField,
    v: ControlField,
    y0: SpectralField,
    cost: CostFunctional,
    cfg: ProblemConfig,
    base: Trajectory | None = None,
    adjoint: AdjointTrajectory | None = None,
) -> tuple[ControlField, float]:
    """Hessian-vector product of the smooth objective and the scalar J''(u) v^2.

    The field comes from the second-order adjoint sweep; the scalar is
    assembled independently as

        int [g''_{yy} z_v^2 + g'_y m_v] dt + gamma ||v||^2,

    with z_v = S'(u) v and m_v = S''(u) v^2, so <Hv, v> equals the scalar to
    roundoff.
    """
    from .forward import solve_forward

    if base is None:
        base = solve_forward(u, y0, cfg)
    if adjoint is None:
        adjoint = solve_adjoint(base, cost, cfg)
    grid = cfg.grid
    f_sym, inv_sym = _step_symbols(cfg)
    dt = cfg.dt
    M = cfg.steps

    z = solve_linearized(base, v, cfg)
    mvv = solve_second(base, z, z, cfg)

    quad = 0.0
    for m in range(1, M + 1):
        quad += inner(cost.hess_apply(m, z.states[m]), z.states[m])
        quad += inner(cost.grad(m, base.states[m]), mvv.states[m])
    scalar = dt * quad + cfg.gamma * control_inner(v, v)

    dq = dt * cost.hess_apply(M, z.states[M])
    hv = np.empty_like(v.values)
    for m in range(M - 1, -1, -1):
        dlam = SpectralField(grid, inv_sym * dq.coeffs)
        hv[m] = cfg.gamma * v.values[m] + dlam.to_physical()
        if m >= 1:
            adj_y = linearized_rhs_adjoint(base.states[m], dlam, cfg.alpha)
            adj_z = linearized_rhs_adjoint(z.states[m], adjoint.costates[m], cfg.alpha)
            dq = dt * cost.hess_apply(m, z.states[m]) + SpectralField(
                grid, f_sym * dlam.coeffs - dt * (adj_y.coeffs + adj_z.coeffs)
            )
    return v.with_values(hv), float(scalar)


def directional_smooth_derivative(ev: SmoothEvaluation, v: ControlField) -> float:
    """J'(u) v from an existing evaluation."""
    return values_inner(ev.gradient, v.values, v.dt, v.grid.cell_volume)


def random_control_values(cfg: ProblemConfig, rng: np.random.Generator, scale: float = 0.3):
    lo = np.asarray(cfg.bounds_lo).reshape(1, 3, 1, 1, 1)
    hi = np.asarray(cfg.bounds_hi).reshape(1, 3, 1, 1, 1)
    raw = rng.uniform(-1.0, 1.0, size=(cfg.steps, 3, *cfg.grid.dims))
    return scale * np.where(raw >= 0, raw * hi, -raw * lo)


def gradient_check_rows(
    problem,
    directions: int = 5,
    rng: np.random.Generator | None = None,
    h_grid: np.ndarray | None = None,
):
    """Central-difference sweep of the smooth reduced gradient.

    One random admissible (u, v) pair per probe direction; rows carry
    (direction, h, fd_value, analytic_value, rel_error) and the returned
    scalar is the worst min-over-h relative error across directions.
    """
    from .costs import cost_eval
    from .forward import solve_forward

    cfg = problem.cfg
    rng = rng or np.random.default_rng(0)
    h_grid = h_grid if h_grid is not None else np.geomspace(1e-7, 1e-1, 13)

    def smooth(u: ControlField) -> float:
        traj = solve_forward(u, problem.y0, cfg)
        return cost_eval(traj, u, problem.cost, cfg)

    rows = []
    worst = 0.0
    for d in range(directions):
        u = ControlField(
            cfg.grid, cfg.t_final, random_control_values(cfg, rng),
            cfg.bounds_lo, cfg.bounds_hi,
        )
        v_vals = rng.standard_normal(u.values.shape)
        v_vals /= max(values_norm(v_vals, u.dt, u.grid.cell_volume), 1e-300)
        ev = evaluate_smooth(u, problem.y0, problem.cost, cfg)
        analytic = values_inner(ev.gradient, v_vals, u.dt, u.grid.cell_volume)
        best = np.inf
        for h in h_grid:
            up = u.with_values(u.values + h * v_vals)
            dn = u.with_values(u.values - h * v_vals)
            fd = (smooth(up) - smooth(dn)) / (2.0 * h)
            rel = abs(fd - analytic) / max(abs(analytic), 1e-300)
            best = min(best, rel)
            rows.append(
                {
                    "direction": d,
                    "h": float(h),
                    "fd_value": fd,
                    "analytic_value": analytic,
                    "rel_error": rel,
                }
            )
        worst = max(worst, best)
    return rows, worst
