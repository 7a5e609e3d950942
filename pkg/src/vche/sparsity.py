"""The three sparsity functionals: values, subgradients, derivatives, prox, KKT maps.

Componentwise convention (the one that makes the optimality-system projection
formulas exact): for a control u with components u_i on the space-time grid,

    j1(u) = sum_i  intint_Q |u_i| dx dt                      (space-time sparse)
    j2(u) = sum_i  [ int_0^T ||u_i(t)||_{L1}^2 dt ]^(1/2)    (time-directional)
    j3(u) = sum_i  int_Omega ||u_i(x)||_{L2(0,T)} dx         (space-directional)

All quadrature follows the forward pairing: left-endpoint in time (weight dt
per interval), cell volume in space.

Subgradients are constructed to be genuine members of the subdifferential at
any (u, lambda) pair: the sign / group-direction structure is used on the
support of u, the projection formula off it.  At a converged control the
construction coincides with the paper-level projection formulas, which is
what kkt_fixed_point measures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import UndefinedSubgradientError, UnsupportedProxError
from .forward import ControlField, ProblemConfig, SparsityKind, values_norm

SUPPORT_TOL_FACTOR = 1e-10  # default support tolerance = factor * max bound


def default_support_tol(bounds_hi) -> float:
    return SUPPORT_TOL_FACTOR * float(np.max(np.abs(bounds_hi)))


def _bounds_arrays(bounds_lo, bounds_hi):
    lo = np.asarray(bounds_lo, dtype=float).reshape(1, 3, 1, 1, 1)
    hi = np.asarray(bounds_hi, dtype=float).reshape(1, 3, 1, 1, 1)
    return lo, hi


# -- values ----------------------------------------------------------------------


def slice_l1(values: np.ndarray, cell_volume: float) -> np.ndarray:
    """||u_i(t_m)||_{L1(Omega)} per (m, i); shape (M, 3)."""
    return cell_volume * np.sum(np.abs(values), axis=(2, 3, 4))


def component_l2l1(values: np.ndarray, dt: float, cell_volume: float) -> np.ndarray:
    """||u_i||_{L2(0,T;L1)} per component; shape (3,)."""
    r = slice_l1(values, cell_volume)
    return np.sqrt(dt * np.sum(r * r, axis=0))


def group_time_norms(values: np.ndarray, dt: float) -> np.ndarray:
    """||u_i(x)||_{L2(0,T)} per (i, x); shape (3, n1, n2, n3)."""
    return np.sqrt(dt * np.sum(values * values, axis=0))


def j_value(u: ControlField, kind: SparsityKind) -> float:
    return j_value_arrays(u.values, u.dt, u.grid.cell_volume, kind)


def j_value_arrays(
    values: np.ndarray, dt: float, cell_volume: float, kind: SparsityKind
) -> float:
    if kind is SparsityKind.NONE:
        return 0.0
    if kind is SparsityKind.J1:
        return float(dt * cell_volume * np.sum(np.abs(values)))
    if kind is SparsityKind.J2:
        return float(np.sum(component_l2l1(values, dt, cell_volume)))
    if kind is SparsityKind.J3:
        return float(cell_volume * np.sum(group_time_norms(values, dt)))
    raise ValueError(f"unknown sparsity kind {kind}")


def sigma_bar_j2(
    values: np.ndarray, dt: float, cell_volume: float, support_tol: float
) -> np.ndarray:
    """sigma_i(t_m) = ||u_i(t_m)||_{L1} / ||u_i||_{L2(L1)}; 1 where u_i == 0.

    Shape (M, 3).  A time slice with u_i(t) == 0 inside a nonzero component
    gets sigma = 0, collapsing the projection interval to {0} (implemented as
    stated in the optimality system).
    """
    r = slice_l1(values, cell_volume)
    total = component_l2l1(values, dt, cell_volume)
    component_zero = np.max(np.abs(values), axis=(0, 2, 3, 4)) <= support_tol
    sigma = np.empty_like(r)
    for i in range(3):
        sigma[:, i] = 1.0 if component_zero[i] else r[:, i] / total[i]
    return sigma


# -- subgradients ------------------------------------------------------------------


@dataclass
class SubgradientField:
    """A constructed element of the subdifferential at u."""

    values: np.ndarray  # zeta, same shape as the control values
    kind: SparsityKind
    sigma: np.ndarray | None = None  # J2: (M, 3) slice scales
    group_norms: np.ndarray | None = None  # J3: (3, n1, n2, n3) time-trace norms


def subgradient(
    u: ControlField,
    lam: np.ndarray,
    kappa: float,
    kind: SparsityKind,
    support_tol: float | None = None,
) -> SubgradientField:
    """Build zeta in the subdifferential of j_kind at u from (u, lambda).

    On the support of u the structure is forced (sign / scaled sign / group
    direction); off the support the projection formula -lambda/kappa is
    clipped into the admissible interval (or L2-ball for the space-sparse
    kind).  kappa = 0 leaves the subgradient undefined.
    """
    if kappa <= 0:
        raise UndefinedSubgradientError("subgradient construction needs kappa > 0")
    if kind is SparsityKind.NONE:
        return SubgradientField(np.zeros_like(u.values), kind)
    tol = default_support_tol(u.bounds_hi) if support_tol is None else support_tol
    vals = u.values
    if kind is SparsityKind.J1:
        zeta = np.where(
            np.abs(vals) > tol, np.sign(vals), np.clip(-lam / kappa, -1.0, 1.0)
        )
        return SubgradientField(zeta, kind)
    if kind is SparsityKind.J2:
        sigma = sigma_bar_j2(vals, u.dt, u.grid.cell_volume, tol)
        sig = sigma[:, :, None, None, None]
        zeta = np.where(
            np.abs(vals) > tol,
            np.sign(vals) * sig,
            np.clip(-lam / kappa, -sig, sig),
        )
        return SubgradientField(zeta, kind, sigma=sigma)
    if kind is SparsityKind.J3:
        rho = group_time_norms(vals, u.dt)
        active = np.max(np.abs(vals), axis=0) > tol  # (3, n1, n2, n3)
        w = -lam / kappa
        wnorm = group_time_norms(w, u.dt)
        shrink = np.minimum(1.0, 1.0 / np.maximum(wnorm, 1e-300))
        off = w * shrink[None]
        with np.errstate(invalid="ignore", divide="ignore"):
            on = np.where(rho[None] > 0, vals / np.maximum(rho[None], 1e-300), 0.0)
        zeta = np.where(active[None], on, off)
        return SubgradientField(zeta, kind, group_norms=rho)
    raise ValueError(f"unknown sparsity kind {kind}")


def subgradient_inequality_violation(
    u: ControlField, zeta: SubgradientField, v_values: np.ndarray, kind: SparsityKind
) -> float:
    """j(u) + <zeta, v - u> - j(v); <= 0 certifies membership for this v."""
    dt, wx = u.dt, u.grid.cell_volume
    ju = j_value_arrays(u.values, dt, wx, kind)
    jv = j_value_arrays(v_values, dt, wx, kind)
    pairing = dt * wx * np.sum(zeta.values * (v_values - u.values))
    return float(ju + pairing - jv)


# -- directional derivatives -------------------------------------------------------


def directional_derivative(
    u: ControlField,
    v: ControlField,
    kind: SparsityKind,
    support_tol: float | None = None,
) -> float:
    """One-sided derivative lim_{h->0+} (j(u+hv) - j(u)) / h, closed form."""
    if kind is SparsityKind.NONE:
        return 0.0
    tol = default_support_tol(u.bounds_hi) if support_tol is None else support_tol
    uu, vv = u.values, v.values
    dt, wx = u.dt, u.grid.cell_volume
    if kind is SparsityKind.J1:
        pos = uu > tol
        neg = uu < -tol
        zero = ~(pos | neg)
        return float(
            dt * wx * (np.sum(vv[pos]) - np.sum(vv[neg]) + np.sum(np.abs(vv[zero])))
        )
    if kind is SparsityKind.J2:
        total = 0.0
        r = slice_l1(uu, wx)
        norm = component_l2l1(uu, dt, wx)
        for i in range(3):
            ui, vi = uu[:, i], vv[:, i]
            if np.max(np.abs(ui)) <= tol:
                total += float(np.sqrt(dt * np.sum((wx * np.sum(np.abs(vi), axis=(1, 2, 3))) ** 2)))
                continue
            pos = ui > tol
            neg = ui < -tol
            zero = ~(pos | neg)
            d_slice = wx * (
                np.sum(np.where(pos, vi, 0.0), axis=(1, 2, 3))
                - np.sum(np.where(neg, vi, 0.0), axis=(1, 2, 3))
                + np.sum(np.where(zero, np.abs(vi), 0.0), axis=(1, 2, 3))
            )
            total += float(dt * np.sum(r[:, i] * d_slice) / norm[i])
        return total
    if kind is SparsityKind.J3:
        rho = group_time_norms(uu, dt)
        active = np.max(np.abs(uu), axis=0) > tol
        vnorm = group_time_norms(vv, dt)
        uv = dt * np.sum(uu * vv, axis=0)
        on = np.where(active, uv / np.maximum(rho, 1e-300), 0.0)
        off = np.where(~active, vnorm, 0.0)
        return float(wx * np.sum(on + off))
    raise ValueError(f"unknown sparsity kind {kind}")


# -- proximal map -------------------------------------------------------------------


def prox_step(
    w: np.ndarray,
    s: float,
    kappa: float,
    bounds_lo,
    bounds_hi,
    kind: SparsityKind,
    dt: float,
    gamma: float = 0.0,
) -> tuple[np.ndarray, bool]:
    """prox_{s kappa j + box}(w), optionally with a non-absorbed Tikhonov term.

    gamma = 0 corresponds to the Tikhonov term having been absorbed into the
    smooth gradient.  The space-time kind is the exact componentwise
    soft-threshold-then-clip (the box contains 0); the space-sparse kind is
    the group shrink of each time trace, exact when no clipping activates and
    flagged inexact otherwise.  The time-mixed kind has no closed-form prox.

    Returns (values, exact).
    """
    if s <= 0:
        raise ValueError("prox step size must be positive")
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    if kind is SparsityKind.J2 and kappa > 0:
        raise UnsupportedProxError(
            "the time-mixed norm has no separable prox; use kkt_fixed_point"
        )
    lo, hi = _bounds_arrays(bounds_lo, bounds_hi)
    scale = 1.0 / (1.0 + s * gamma)
    if kind in (SparsityKind.NONE, SparsityKind.J2) or kappa == 0.0:
        return np.clip(w * scale, lo, hi), True
    if kind is SparsityKind.J1:
        z = np.sign(w) * np.maximum(np.abs(w) - s * kappa, 0.0) * scale
        return np.clip(z, lo, hi), True
    if kind is SparsityKind.J3:
        wnorm = group_time_norms(w, dt)
        factor = np.maximum(0.0, 1.0 - s * kappa / np.maximum(wnorm, 1e-300))
        z = w * factor[None] * scale
        clipped = np.clip(z, lo, hi)
        exact = bool(np.all(clipped == z))
        return clipped, exact
    raise ValueError(f"unknown sparsity kind {kind}")


# -- fixed-point (KKT) map -----------------------------------------------------------


def kkt_fixed_point(
    u: ControlField,
    lam: np.ndarray,
    kappa: float,
    gamma: float,
    bounds_lo,
    bounds_hi,
    kind: SparsityKind,
    support_tol: float | None = None,
) -> tuple[ControlField, float]:
    """u_next = Proj_box(-(lambda + kappa zeta)/gamma), residual = ||u - u_next||.

    The residual vanishes exactly when (u, lambda) satisfies the optimality
    system's projection relations for this sparsity kind.
    """
    if gamma <= 0:
        raise ValueError("the fixed-point map needs gamma > 0 (bang-bang regime is out of scope)")
    if kappa < 0:
        raise ValueError("kappa must be >= 0")
    if kappa == 0 or kind is SparsityKind.NONE:
        zeta_vals = np.zeros_like(u.values)
    else:
        zeta_vals = subgradient(u, lam, kappa, kind, support_tol).values
    lo, hi = _bounds_arrays(bounds_lo, bounds_hi)
    target = np.clip(-(lam + kappa * zeta_vals) / gamma, lo, hi)
    residual = values_norm(u.values - target, u.dt, u.grid.cell_volume)
    return u.with_values(target), residual


# -- support analytics ----------------------------------------------------------------


def support_stats(u: ControlField, tol: float | None = None) -> dict:
    """Support measures under the three sparsity views."""
    tol = default_support_tol(u.bounds_hi) if tol is None else tol
    vals = u.values
    active = np.abs(vals) > tol
    per_time = active.mean(axis=(1, 2, 3, 4))  # (M,)
    group_active = np.max(np.abs(vals), axis=0) > tol  # (3, n1, n2, n3)
    return {
        "fraction": float(active.mean()),
        "per_time_fraction": per_time,
        "group_fraction": float(group_active.mean()),
        "group_active": group_active,
        "tol": tol,
    }


def estimate_threshold_M(y0, cost, cfg: ProblemConfig) -> float:
    """Max-norm of the adjoint at the zero control: the computable surrogate
    for the support-killing threshold (u == 0 once kappa exceeds it)."""
    from .forward import ControlField, solve_forward
    from .sensitivity import solve_adjoint

    u0 = ControlField.zeros(cfg)
    traj = solve_forward(u0, y0, cfg)
    adj = solve_adjoint(traj, cost, cfg)
    return float(np.max(np.abs(adj.interval_physical())))


# -- converged-point structure checks ---------------------------------------------------


def kkt_structure_report(
    u: ControlField,
    lam: np.ndarray,
    kappa: float,
    gamma: float,
    kind: SparsityKind,
    support_tol: float = 1e-8,
) -> dict:
    """Check the three optimality relations at (u, lambda) for one kind.

    Reports the fixed-point residual, the number of nodes misclassified by
    the support characterization, and the max deviation of the constructed
    zeta from its projection formula.
    """
    u_next, residual = kkt_fixed_point(
        u, lam, kappa, gamma, u.bounds_lo, u.bounds_hi, kind
    )
    out = {
        "residual": residual,
        "projection_max_err": float(np.max(np.abs(u.values - u_next.values))),
        "support_misclassified": 0,
        "zeta_max_err": 0.0,
    }
    if kappa == 0 or kind is SparsityKind.NONE:
        return out
    zeta = subgradient(u, lam, kappa, kind)
    tol = support_tol
    if kind is SparsityKind.J1:
        u_zero = np.abs(u.values) <= tol
        lam_small = np.abs(lam) <= kappa + tol
        lam_small_strict = np.abs(lam) <= kappa - tol
        mis = int(np.sum(u_zero & ~lam_small) + np.sum(~u_zero & lam_small_strict))
        formula = np.clip(-lam / kappa, -1.0, 1.0)
    elif kind is SparsityKind.J2:
        sig = zeta.sigma[:, :, None, None, None]
        u_zero = np.abs(u.values) <= tol
        lam_small = np.abs(lam) <= kappa * sig + tol
        lam_small_strict = np.abs(lam) <= kappa * sig - tol
        mis = int(np.sum(u_zero & ~lam_small) + np.sum(~u_zero & lam_small_strict))
        formula = np.clip(-lam / kappa, -sig, sig)
    else:  # J3, group relations per (component, point)
        rho = zeta.group_norms
        lam_rho = group_time_norms(lam, u.dt)
        u_zero = rho <= tol
        lam_small = lam_rho <= kappa + tol
        lam_small_strict = lam_rho <= kappa - tol
        mis = int(np.sum(u_zero & ~lam_small) + np.sum(~u_zero & lam_small_strict))
        w = -lam / kappa
        wnorm = group_time_norms(w, u.dt)
        formula = w * np.minimum(1.0, 1.0 / np.maximum(wnorm, 1e-300))[None]
    out["support_misclassified"] = mis
    out["zeta_max_err"] = float(np.max(np.abs(zeta.values - formula)))
    return out
