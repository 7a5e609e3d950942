"""Time integration of the filtered momentum system (control-to-state map S).

The state solves, weakly against divergence-free test fields,

    d/dt (F y) + nu A (F y) + Bt(y, F y) = P u,    F = I + alpha^2 A,

discretized by a first-order IMEX step: the diagonal linear part is implicit,
the dealiased Bt term and the control are explicit over each interval
[t_m, t_{m+1}).  Controls are piecewise constant in time on the collocation
grid; the L2(Q) pairing uses the left-endpoint rule matching the stencil.

All derivative solvers elsewhere in the package are exact derivatives of this
discrete map (discretize-then-optimize).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .exceptions import DivergenceError, GridMismatchError
from .fields import SpectralField, inner, l2_norm, norms
from .grids import Grid
from .operators import btilde, helmholtz, helmholtz_symbol, project_physical

BLOWUP_FACTOR = 1e8


class SparsityKind(Enum):
    NONE = "none"
    J1 = "j1"
    J2 = "j2"
    J3 = "j3"


class CostKind(Enum):
    QUADRATIC_TRACKING = "quadratic_tracking"
    GRADIENT_TRACKING = "gradient_tracking"


@dataclass(frozen=True)
class ProblemConfig:
    """Scalar parameters of one control problem instance."""

    grid: Grid
    t_final: float
    steps: int
    viscosity: float
    alpha: float
    gamma: float
    kappa: float = 0.0
    bounds_lo: tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bounds_hi: tuple[float, float, float] = (1.0, 1.0, 1.0)
    sparsity: SparsityKind = SparsityKind.NONE
    cost_kind: CostKind = CostKind.QUADRATIC_TRACKING
    cost_weight: float = 1.0

    def __post_init__(self):
        if self.t_final <= 0:
            raise ValueError("final time must be positive")
        if self.steps < 2:
            raise ValueError("need at least 2 time steps")
        if self.viscosity <= 0:
            raise ValueError("viscosity must be positive")
        if self.alpha <= 0:
            raise ValueError("filter scale alpha must be positive")
        if self.gamma <= 0:
            raise ValueError("Tikhonov weight gamma must be positive")
        if self.kappa < 0:
            raise ValueError("sparsity weight kappa must be >= 0")
        if self.cost_weight < 0:
            raise ValueError("tracking weight must be >= 0")
        for a, b in zip(self.bounds_lo, self.bounds_hi):
            if not (a <= 0.0 < b):
                raise ValueError(f"admissible set needs a_i <= 0 < b_i, got ({a}, {b})")

    @property
    def dt(self) -> float:
        return self.t_final / self.steps

    def with_kappa(self, kappa: float) -> "ProblemConfig":
        return replace(self, kappa=kappa)

    def with_steps(self, steps: int) -> "ProblemConfig":
        return replace(self, steps=steps)


def suggest_steps(grid: Grid, t_final: float, viscosity: float, limit: float = 10.0) -> int:
    """Smallest M with nu |k_max|^2 dt <= limit (keeps the implicit solve tame)."""
    kmax_sq = float(np.max(grid.k_squared[grid.dealias_mask]))
    return max(2, int(np.ceil(t_final * viscosity * kmax_sq / limit)))


# -- controls -----------------------------------------------------------------


@dataclass
class ControlField:
    """Piecewise-constant-in-time vector field on the collocation grid.

    values[m] is the control on [t_m, t_{m+1}); shape (M, 3, n1, n2, n3).
    """

    grid: Grid
    t_final: float
    values: np.ndarray
    bounds_lo: tuple[float, float, float]
    bounds_hi: tuple[float, float, float]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 5 or self.values.shape[1:] != (3, *self.grid.dims):
            raise ValueError(
                f"control values have shape {self.values.shape}, "
                f"expected (M, 3, {', '.join(map(str, self.grid.dims))})"
            )

    @classmethod
    def zeros(cls, cfg: ProblemConfig) -> "ControlField":
        vals = np.zeros((cfg.steps, 3, *cfg.grid.dims))
        return cls(cfg.grid, cfg.t_final, vals, cfg.bounds_lo, cfg.bounds_hi)

    @property
    def steps(self) -> int:
        return self.values.shape[0]

    @property
    def dt(self) -> float:
        return self.t_final / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_final, self.steps + 1)

    def copy(self) -> "ControlField":
        return ControlField(
            self.grid, self.t_final, self.values.copy(), self.bounds_lo, self.bounds_hi
        )

    def with_values(self, values: np.ndarray) -> "ControlField":
        return ControlField(self.grid, self.t_final, values, self.bounds_lo, self.bounds_hi)

    def is_admissible(self, tol: float = 0.0) -> bool:
        lo = np.asarray(self.bounds_lo).reshape(1, 3, 1, 1, 1)
        hi = np.asarray(self.bounds_hi).reshape(1, 3, 1, 1, 1)
        return bool(np.all(self.values >= lo - tol) and np.all(self.values <= hi + tol))

    def clipped(self) -> "ControlField":
        lo = np.asarray(self.bounds_lo).reshape(1, 3, 1, 1, 1)
        hi = np.asarray(self.bounds_hi).reshape(1, 3, 1, 1, 1)
        return self.with_values(np.clip(self.values, lo, hi))


def control_inner(u: ControlField, v: ControlField) -> float:
    """L2(Q) inner product with the left-endpoint-in-time quadrature."""
    if u.values.shape != v.values.shape:
        raise GridMismatchError("control fields have different shapes")
    return float(u.dt * u.grid.cell_volume * np.sum(u.values * v.values))


def control_norm(u: ControlField) -> float:
    return float(np.sqrt(max(control_inner(u, u), 0.0)))


def values_inner(a: np.ndarray, b: np.ndarray, dt: float, cell_volume: float) -> float:
    return float(dt * cell_volume * np.sum(a * b))


def values_norm(a: np.ndarray, dt: float, cell_volume: float) -> float:
    return float(np.sqrt(max(values_inner(a, a, dt, cell_volume), 0.0)))


# -- trajectories ----------------------------------------------------------------


@dataclass
class Trajectory:
    """States at the M+1 time nodes plus the step metadata."""

    states: list
    dt: float
    config: ProblemConfig
    ledger: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return len(self.states) - 1

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    def state(self, m: int) -> SpectralField:
        return self.states[m]


def step(
    y: SpectralField, u_slice: np.ndarray, dt: float, cfg: ProblemConfig
) -> SpectralField:
    """One IMEX step; u_slice is a physical (3, n1, n2, n3) field."""
    u_hat = project_physical(cfg.grid, u_slice)
    f_sym = helmholtz_symbol(cfg.grid, cfg.alpha).symbol
    denom = f_sym * (1.0 + dt * cfg.viscosity * cfg.grid.k_squared)
    return _step_spectral(y, u_hat, dt, cfg, f_sym, denom)


def _step_spectral(y, u_hat, dt, cfg, f_sym, denom) -> SpectralField:
    fy = helmholtz(y, cfg.alpha)
    nl = btilde(y, fy)
    new = (f_sym * y.coeffs - dt * nl.coeffs + dt * u_hat.coeffs) / denom
    return SpectralField(cfg.grid, new)


def solve_forward(u: ControlField, y0: SpectralField, cfg: ProblemConfig) -> Trajectory:
    """March the state over M steps; deterministic; records the energy ledger."""
    if not u.grid.same_as(cfg.grid) or not y0.grid.same_as(cfg.grid):
        raise GridMismatchError("control / initial state grid differs from the config grid")
    if u.steps != cfg.steps:
        raise GridMismatchError(f"control has {u.steps} slices, config wants {cfg.steps}")
    dt = cfg.dt
    f_sym = helmholtz_symbol(cfg.grid, cfg.alpha).symbol
    denom = f_sym * (1.0 + dt * cfg.viscosity * cfg.grid.k_squared)
    scale0 = max(l2_norm(y0), float(np.max(np.abs(u.values)) * np.sqrt(cfg.grid.volume)), 1e-30)
    states = [y0.copy()]
    ledger = []
    y = y0
    for m in range(cfg.steps):
        u_hat = project_physical(cfg.grid, u.values[m])
        y_new = _step_spectral(y, u_hat, dt, cfg, f_sym, denom)
        l2 = l2_norm(y_new)
        if not np.isfinite(l2) or l2 > BLOWUP_FACTOR * scale0:
            raise DivergenceError(m)
        ledger.append(_ledger_entry(m, dt, cfg, y, y_new, u_hat))
        states.append(y_new)
        y = y_new
    return Trajectory(states, dt, cfg, ledger)


def filtered_energy(y: SpectralField, alpha: float) -> float:
    """|y|^2 + alpha^2 ||y||^2 = <F y, y>."""
    return inner(helmholtz(y, alpha), y)


def _dissipation_density(y: SpectralField, cfg: ProblemConfig) -> float:
    """||y||^2 + alpha^2 |A y|^2."""
    n = norms(y)
    return n["h1"] ** 2 + cfg.alpha**2 * n["da"] ** 2


def _ledger_entry(m, dt, cfg, y_old, y_new, u_hat):
    return {
        "step": m + 1,
        "time": (m + 1) * dt,
        "kinetic": filtered_energy(y_new, cfg.alpha),
        "dissipation_inc": cfg.viscosity * dt * _dissipation_density(y_new, cfg),
        "work_inc": 2.0 * dt * inner(u_hat, y_new),
        "control_sq_inc": dt * inner(u_hat, u_hat),
    }


def energy_ledger(traj: Trajectory) -> list:
    """Cumulative energy balance records with per-step inequality flags.

    Checks the discrete analogue of

        E(t) + nu int (||y||^2 + a^2 |Ay|^2) <= |y0|^2 + a^2 ||y0||_{D(A)}^2 + C ||u||^2

    with E = |y|^2 + a^2 ||y||^2; C is fitted by least squares over the steps
    with nonzero control energy (the estimate constant is not quantified).
    """
    cfg = traj.config
    y0 = traj.states[0]
    n0 = norms(y0)
    rhs_base = n0["l2"] ** 2 + cfg.alpha**2 * n0["da"] ** 2
    rows = []
    diss_cum = 0.0
    ctrl_cum = 0.0
    for entry in traj.ledger:
        diss_cum += entry["dissipation_inc"]
        ctrl_cum += entry["control_sq_inc"]
        rows.append(
            {
                **entry,
                "dissipation_cum": diss_cum,
                "control_sq_cum": ctrl_cum,
                "lhs": entry["kinetic"] + diss_cum,
                "rhs_base": rhs_base,
            }
        )
    c_fit = fit_ledger_constant(rows)
    for row in rows:
        bound = row["rhs_base"] + c_fit * row["control_sq_cum"]
        row["constant"] = c_fit
        row["violation"] = max(0.0, row["lhs"] - bound)
        row["ok"] = row["violation"] <= 1e-10 * max(1.0, bound)
    return rows


def fit_ledger_constant(rows) -> float:
    """Least-squares C for lhs - rhs_base ~ C * ||u||^2_cum (0 if no control)."""
    num = sum(max(r["lhs"] - r["rhs_base"], 0.0) * r["control_sq_cum"] for r in rows)
    den = sum(r["control_sq_cum"] ** 2 for r in rows)
    return num / den if den > 0 else 0.0


def trajectory_rows(traj: Trajectory) -> list:
    """Per-node CSV rows: step, time, l2, h1, da plus the ledger terms."""
    rows = []
    ledger = energy_ledger(traj)
    for m, y in enumerate(traj.states):
        n = norms(y)
        row = {
            "step": m,
            "time": m * traj.dt,
            "l2": n["l2"],
            "h1": n["h1"],
            "da": n["da"],
            "kinetic": filtered_energy(y, traj.config.alpha),
            "dissipation_cum": 0.0,
            "work_inc": 0.0,
        }
        if m > 0:
            row["dissipation_cum"] = ledger[m - 1]["dissipation_cum"]
            row["work_inc"] = ledger[m - 1]["work_inc"]
        rows.append(row)
    return rows
