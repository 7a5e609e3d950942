"""Solvers for the sparse control problem over the box-constrained admissible set.

Two outer iterations, both stopped by the fixed-point residual of the
optimality system's own projection formula:

  * PROX_GRAD: proximal gradient on  smooth(u) + kappa j(u) + box indicator,
    with backtracking line search (monotone in the composite objective).
    Unavailable for the time-mixed sparsity kind, which has no prox.
  * FIXED_POINT: damped iteration of u -> Proj_box(-(lambda + kappa zeta)/gamma),
    damping halved whenever the residual increases.

Second-order machinery: critical-cone direction sampling via the
truncation recipe (zero bands of width 1/k near the bounds and near zero,
clip to [-k, k], sign-feasibility at active bounds), Hessian quadratic-form
probes, and the quadratic-growth sampling check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .costs import CostFunctional, cost_parts
from .exceptions import UnsupportedProxError
from .fields import SpectralField
from .forward import ControlField, ProblemConfig, SparsityKind, solve_forward, values_norm
from .sensitivity import SmoothEvaluation, evaluate_smooth, hessian_vec
from .sparsity import (
    default_support_tol,
    directional_derivative,
    j_value,
    kkt_fixed_point,
    prox_step,
    subgradient,
    support_stats,
)


class Method(Enum):
    PROX_GRAD = "prox_grad"
    FIXED_POINT = "fixed_point"


@dataclass
class SolveOptions:
    max_iters: int = 2000
    step0: float | None = None  # default 1/gamma
    backtrack: float = 0.5  # shrink factor beta in (0, 1)
    sufficient_decrease: float = 0.5  # c in (0, 1)
    kkt_tol: float = 1e-8
    method: Method = Method.PROX_GRAD
    fp_damping: float = 0.5
    seed: int = 0
    init: str = "zero"  # "zero" (default, admissible) or "random"

    def __post_init__(self):
        if self.kkt_tol <= 0:
            raise ValueError("kkt_tol must be positive")
        if not 0.0 < self.backtrack < 1.0:
            raise ValueError("backtracking factor must lie in (0, 1)")
        if not 0.0 < self.sufficient_decrease < 1.0:
            raise ValueError("sufficient-decrease constant must lie in (0, 1)")


@dataclass
class Problem:
    """A fully materialized instance: parameters, cost data, initial state."""

    cfg: ProblemConfig
    cost: CostFunctional
    y0: SpectralField

    def objective(self, u: ControlField) -> float:
        traj = solve_forward(u, self.y0, self.cfg)
        parts = cost_parts(traj, u, self.cost, self.cfg)
        return (
            parts["tracking"]
            + parts["tikhonov"]
            + self.cfg.kappa * j_value(u, self.cfg.sparsity)
        )

    def smooth_eval(self, u: ControlField) -> SmoothEvaluation:
        return evaluate_smooth(u, self.y0, self.cost, self.cfg)

    def zero_control(self) -> ControlField:
        return ControlField.zeros(self.cfg)


@dataclass
class OptimalityReport:
    objective_tracking: float
    objective_tikhonov: float
    objective_sparsity: float
    kkt_residual: float
    iterations: int
    converged: bool
    method: str
    support: dict
    eta_violations: dict
    second_order: dict | None = None
    history: list = field(default_factory=list)

    @property
    def objective(self) -> float:
        return self.objective_tracking + self.objective_tikhonov + self.objective_sparsity

    def __post_init__(self):
        for part in (self.objective_tracking, self.objective_tikhonov, self.objective_sparsity):
            if part < -1e-14:
                raise ValueError("objective parts must be non-negative")
        if self.kkt_residual < 0:
            raise ValueError("residual must be non-negative")


def _initial_control(problem: Problem, opts: SolveOptions) -> ControlField:
    u = problem.zero_control()
    if opts.init == "random":
        rng = np.random.default_rng(opts.seed)
        lo = np.asarray(problem.cfg.bounds_lo).reshape(1, 3, 1, 1, 1)
        hi = np.asarray(problem.cfg.bounds_hi).reshape(1, 3, 1, 1, 1)
        vals = rng.uniform(0.0, 1.0, size=u.values.shape)
        u = u.with_values(lo + vals * (hi - lo))
    return u


def solve(
    problem: Problem, opts: SolveOptions, warm_start: ControlField | None = None
) -> tuple[ControlField, OptimalityReport]:
    """Minimize the sparse objective; returns the iterate and its report."""
    cfg = problem.cfg
    kind = cfg.sparsity
    if opts.method is Method.PROX_GRAD and kind is SparsityKind.J2 and cfg.kappa > 0:
        raise UnsupportedProxError(
            "PROX_GRAD is unavailable for the time-mixed sparsity kind; use FIXED_POINT"
        )

    u = warm_start.clipped() if warm_start is not None else _initial_control(problem, opts)
    ev = problem.smooth_eval(u)
    j_u = j_value(u, kind) if cfg.kappa > 0 else 0.0
    objective = ev.cost + cfg.kappa * j_u

    s = opts.step0 if opts.step0 is not None else 1.0 / cfg.gamma
    omega = opts.fp_damping
    omega_cap = opts.fp_damping
    good_streak = 0
    history = []
    converged = False
    iterations = 0

    _, residual = kkt_fixed_point(
        u, ev.lambda_phys, cfg.kappa, cfg.gamma, cfg.bounds_lo, cfg.bounds_hi, kind
    )
    for it in range(1, opts.max_iters + 1):
        iterations = it
        history.append({"iter": it, "objective": objective, "residual": residual, "step": s})
        if residual <= opts.kkt_tol:
            converged = True
            break

        if opts.method is Method.PROX_GRAD:
            u, ev, objective, s = _prox_grad_step(problem, u, ev, objective, s, opts)
            _, residual = kkt_fixed_point(
                u, ev.lambda_phys, cfg.kappa, cfg.gamma, cfg.bounds_lo, cfg.bounds_hi, kind
            )
        else:
            # damped fixed-point step: reject on residual increase (halving
            # omega), grow omega back after a stretch of accepted steps
            u_fp, _ = kkt_fixed_point(
                u, ev.lambda_phys, cfg.kappa, cfg.gamma, cfg.bounds_lo, cfg.bounds_hi, kind
            )
            cand = u.with_values((1.0 - omega) * u.values + omega * u_fp.values)
            ev_c = problem.smooth_eval(cand)
            _, res_c = kkt_fixed_point(
                cand, ev_c.lambda_phys, cfg.kappa, cfg.gamma,
                cfg.bounds_lo, cfg.bounds_hi, kind,
            )
            if res_c <= residual * (1.0 + 1e-9) or omega <= 2.0**-12:
                u, ev, residual = cand, ev_c, res_c
                objective = ev.cost + (
                    cfg.kappa * j_value(u, kind) if cfg.kappa > 0 else 0.0
                )
                good_streak += 1
                if good_streak >= 8:
                    omega = min(1.3 * omega, omega_cap)
                    good_streak = 0
            else:
                omega = max(0.5 * omega, 2.0**-12)
                good_streak = 0

    report = build_report(problem, u, ev, iterations, converged, opts, history)
    return u, report


def _smooth_cost_only(problem, u: ControlField):
    traj = solve_forward(u, problem.y0, problem.cfg)
    parts = cost_parts(traj, u, problem.cost, problem.cfg)
    return parts["tracking"] + parts["tikhonov"], traj


def _prox_grad_step(problem, u, ev, objective, s, opts):
    """One backtracked proximal-gradient update; monotone in the composite.

    Trial points are priced with a forward solve only; the adjoint is
    evaluated once on the accepted point.
    """
    cfg = problem.cfg
    kind = cfg.sparsity
    c = opts.sufficient_decrease
    dt, wx = u.dt, u.grid.cell_volume
    slack = 1e-12 * (1.0 + abs(objective))
    while True:
        w = u.values - s * ev.gradient
        z, _ = prox_step(w, s, cfg.kappa, cfg.bounds_lo, cfg.bounds_hi, kind, dt)
        if np.array_equal(z, u.values):
            return u, ev, objective, s  # stationary at this step size
        u_trial = u.with_values(z)
        smooth_trial, traj_trial = _smooth_cost_only(problem, u_trial)
        obj_trial = smooth_trial + (
            cfg.kappa * j_value(u_trial, kind) if cfg.kappa > 0 else 0.0
        )
        move_sq = values_norm(z - u.values, dt, wx) ** 2
        accept = obj_trial <= objective - (c / (2.0 * s)) * move_sq + slack
        if accept or s < 1e-14 / cfg.gamma:
            ev_trial = evaluate_smooth(
                u_trial, problem.y0, problem.cost, cfg, traj=traj_trial
            )
            return u_trial, ev_trial, obj_trial, s
        s *= opts.backtrack


def build_report(problem, u, ev, iterations, converged, opts, history) -> OptimalityReport:
    cfg = problem.cfg
    kind = cfg.sparsity
    j_u = j_value(u, kind) if cfg.kappa > 0 else 0.0
    _, residual = kkt_fixed_point(
        u, ev.lambda_phys, cfg.kappa, cfg.gamma, cfg.bounds_lo, cfg.bounds_hi, kind
    )
    if cfg.kappa > 0 and kind is not SparsityKind.NONE:
        zeta_vals = subgradient(u, ev.lambda_phys, cfg.kappa, kind).values
    else:
        zeta_vals = np.zeros_like(u.values)
    _, eta_report = eta_field(u, ev.lambda_phys, zeta_vals, cfg.kappa, cfg.gamma)
    return OptimalityReport(
        objective_tracking=ev.tracking,
        objective_tikhonov=ev.tikhonov,
        objective_sparsity=cfg.kappa * j_u,
        kkt_residual=residual,
        iterations=iterations,
        converged=converged,
        method=opts.method.value,
        support=support_stats(u),
        eta_violations=eta_report,
        history=history,
    )


# -- stationarity multiplier -------------------------------------------------------


def eta_field(
    u: ControlField, lam: np.ndarray, zeta: np.ndarray, kappa: float, gamma: float
) -> tuple[np.ndarray, dict]:
    """eta = lambda + gamma u + kappa zeta, with its sign-structure violations.

    At an exact solution: eta >= 0 where u sits at the lower bound, <= 0 at
    the upper bound, and eta = 0 on the strict interior.
    """
    eta = lam + gamma * u.values + kappa * zeta
    lo = np.asarray(u.bounds_lo).reshape(1, 3, 1, 1, 1)
    hi = np.asarray(u.bounds_hi).reshape(1, 3, 1, 1, 1)
    at_lo = u.values <= lo
    at_hi = u.values >= hi
    interior = ~(at_lo | at_hi)
    report = {
        "lower_violation": float(np.max(np.maximum(-eta, 0.0) * at_lo, initial=0.0)),
        "upper_violation": float(np.max(np.maximum(eta, 0.0) * at_hi, initial=0.0)),
        "interior_violation": float(np.max(np.abs(eta) * interior, initial=0.0)),
    }
    report["max_violation"] = max(report.values())
    return eta, report


# -- critical cone ------------------------------------------------------------------


@dataclass
class CriticalDirection:
    values: np.ndarray
    norm: float
    cone_value: float  # J'(u) v + kappa j'(u) v
    sign_ok: bool
    accepted: bool


def sample_critical_cone(
    problem: Problem,
    u: ControlField,
    ev: SmoothEvaluation,
    count: int,
    tau: float,
    trunc_k: float = 8.0,
    rng: np.random.Generator | None = None,
    active_tol: float | None = None,
) -> list[CriticalDirection]:
    """Random directions pushed into the tau-critical cone at u.

    Recipe: zero the bands (a, a + 1/k), (b - 1/k, b), 0 < |u| < 1/k; clip to
    [-k, k]; enforce the sign conditions at the active bounds; zero strongly
    active multiplier nodes; align the zero-set values with the subgradient
    where it saturates (so the nonsmooth directional derivative collapses to
    <zeta, v>), zero them otherwise.  Directions failing the cone test
    |J'(u)v + kappa j'(u)v| <= tau ||v|| are dropped.
    """
    cfg = problem.cfg
    kind = cfg.sparsity
    rng = rng or np.random.default_rng(0)
    band = 1.0 / trunc_k
    snap = 1e-6
    stol = default_support_tol(u.bounds_hi)
    lo = np.asarray(u.bounds_lo).reshape(1, 3, 1, 1, 1)
    hi = np.asarray(u.bounds_hi).reshape(1, 3, 1, 1, 1)
    lo_b = np.broadcast_to(lo, u.values.shape)
    hi_b = np.broadcast_to(hi, u.values.shape)
    at_lo = u.values <= lo_b
    at_hi = u.values >= hi_b
    if cfg.kappa > 0 and kind is not SparsityKind.NONE:
        zeta = subgradient(u, ev.lambda_phys, cfg.kappa, kind)
    else:
        zeta = None
    eta, _ = eta_field(
        u,
        ev.lambda_phys,
        zeta.values if zeta is not None else np.zeros_like(u.values),
        cfg.kappa,
        cfg.gamma,
    )
    act_tol = active_tol if active_tol is not None else 10.0 * float(np.max(np.abs(eta)) + 1e-300) * 1e-3

    out = []
    for _ in range(count):
        v = rng.standard_normal(u.values.shape)
        near_lo = (u.values > lo_b) & (u.values < lo_b + band)
        near_hi = (u.values > hi_b - band) & (u.values < hi_b)
        near_zero = (np.abs(u.values) > stol) & (np.abs(u.values) < band)
        v[near_lo | near_hi | near_zero] = 0.0
        v = np.clip(v, -trunc_k, trunc_k)
        v[at_lo] = np.abs(v[at_lo])
        v[at_hi] = -np.abs(v[at_hi])
        v[at_lo & (eta > act_tol)] = 0.0
        v[at_hi & (eta < -act_tol)] = 0.0
        if zeta is not None:
            v = _shape_zero_set(u, v, zeta, kind, stol, snap)
        vf = u.with_values(v)
        normv = values_norm(v, u.dt, u.grid.cell_volume)
        if normv <= 0:
            continue
        cone_val = values_inner_like(ev.gradient, v, u) + cfg.kappa * directional_derivative(
            u, vf, kind
        )
        sign_ok = bool(np.all(v[at_lo] >= 0) and np.all(v[at_hi] <= 0))
        accepted = abs(cone_val) <= tau * normv and sign_ok
        direction = CriticalDirection(v, normv, cone_val, sign_ok, accepted)
        if accepted:
            out.append(direction)
    return out


def values_inner_like(a: np.ndarray, b: np.ndarray, u: ControlField) -> float:
    return float(u.dt * u.grid.cell_volume * np.sum(a * b))


def _shape_zero_set(u, v, zeta, kind, stol, snap):
    """Force |v| = zeta v on the zero set of u (criticality of the j-term)."""
    vals = u.values
    if kind is SparsityKind.J1 or kind is SparsityKind.J2:
        if kind is SparsityKind.J1:
            cap = np.ones_like(vals)
        else:
            cap = np.broadcast_to(
                zeta.sigma[:, :, None, None, None], vals.shape
            )
        zero = np.abs(vals) <= stol
        saturated = zero & (np.abs(zeta.values) >= (1.0 - snap) * cap) & (cap > stol)
        v = np.where(zero, 0.0, v)
        v = np.where(saturated, np.sign(zeta.values) * np.abs(v), v)
        return v
    if kind is SparsityKind.J3:
        rho = zeta.group_norms
        inactive = np.max(np.abs(vals), axis=0) <= stol  # (3, n1, n2, n3)
        znorm = np.sqrt(u.dt * np.sum(zeta.values**2, axis=0))
        saturated = inactive & (znorm >= 1.0 - snap)
        scale = np.abs(v[0]) + np.abs(v[-1])  # deterministic positive scalar per group
        v = np.where(inactive[None], 0.0, v)
        v = np.where(
            (saturated)[None], zeta.values * scale[None], v
        )
        return v
    return v


# -- second-order probes ---------------------------------------------------------------


def second_order_probe(
    problem: Problem,
    u: ControlField,
    directions: list,
    ev: SmoothEvaluation | None = None,
) -> dict:
    """Evaluate J''(u) v^2 over sampled critical directions.

    Reports each value, mu_hat = min J''v^2 / ||v||^2, and the second-order
    necessary check J''v^2 >= -1e-8 gamma ||v||^2.
    """
    cfg = problem.cfg
    if ev is None:
        ev = problem.smooth_eval(u)
    values = []
    ratios = []
    snc_ok = True
    for d in directions:
        v = u.with_values(d.values)
        _, quad = hessian_vec(
            u, v, problem.y0, problem.cost, cfg,
            base=ev.trajectory, adjoint=ev.adjoint,
        )
        values.append(quad)
        nv2 = d.norm**2
        ratios.append(quad / nv2)
        if quad < -1e-8 * cfg.gamma * nv2:
            snc_ok = False
    return {
        "values": values,
        "ratios": ratios,
        "mu_hat": min(ratios) if ratios else float("nan"),
        "snc_ok": snc_ok,
        "count": len(values),
    }


def growth_check(
    problem: Problem,
    u: ControlField,
    direction: CriticalDirection,
    delta_hat: float,
    t_grid: np.ndarray,
) -> dict:
    """Sample the quadratic-growth inequality along one critical direction.

    Checks J_kappa(u + t v) >= J_kappa(u) + (delta_hat / 2) t^2 ||v||^2 for
    each t in the grid (u + t v must remain admissible, which the truncation
    recipe guarantees for t <= 1/k^2).
    """
    base_obj = problem.objective(u)
    margins = []
    ok = True
    for t in t_grid:
        u_t = u.with_values(u.values + t * direction.values)
        if not u_t.is_admissible(tol=1e-12):
            margins.append(float("nan"))
            ok = False
            continue
        lhs = problem.objective(u_t) - base_obj
        rhs = 0.5 * delta_hat * t * t * direction.norm**2
        margins.append(lhs - rhs)
        if lhs + 1e-14 * (1.0 + abs(base_obj)) < rhs:
            ok = False
    return {"t_grid": list(map(float, t_grid)), "margins": margins, "ok": ok}
