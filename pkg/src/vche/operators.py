"""Spatial operators on the periodic box.

Everything here is diagonal or pseudo-spectral:

  * Leray projection P onto divergence-free fields (per-mode formula),
  * Stokes operator A = -P Laplace and its fractional powers (diagonal),
  * Helmholtz filter F = I + alpha^2 A and its inverse (diagonal),
  * trilinear form b(u,v,w) = sum_ij int u_i d_i v_j w_j dx,
  * the bilinear operator Bt(u,v) with <Bt(u,v), w> = b(u,v,w) - b(w,v,u),
  * the linearization of y -> Bt(y, F y) and its exact L2 transpose.

With the dealias cutoff of grids.Grid quadratic products are alias-free, so
the algebraic identities (antisymmetry of b, <Bt(u,v),u> = 0, exactness of
the transposes) hold to roundoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidFieldError, SingularOperatorError
from .fields import SpectralField, _require_same_grid, hermitian_violation, HERMITIAN_TOL
from .grids import Grid


# -- diagonal operators ------------------------------------------------------


@dataclass(frozen=True)
class OperatorDiag:
    """Diagonal Fourier multiplier; symbol depends only on |k|^2."""

    grid: Grid
    symbol: np.ndarray  # real, shape grid.dims

    def apply(self, f: SpectralField) -> SpectralField:
        if not f.grid.same_as(self.grid):
            raise InvalidFieldError("operator and field grids differ")
        return SpectralField(f.grid, f.coeffs * self.symbol)


def stokes_symbol(grid: Grid, power: float) -> OperatorDiag:
    """|k|^(2*power); zero at k = 0 for power > 0, zero by gauge convention."""
    ks = grid.k_squared
    if power >= 0:
        sym = ks**power
        if power == 0:
            sym = np.ones_like(ks)
    else:
        sym = np.zeros_like(ks)
        nz = ks > 0
        sym[nz] = ks[nz] ** power
    return OperatorDiag(grid, sym)


def helmholtz_symbol(grid: Grid, alpha: float, invert: bool = False) -> OperatorDiag:
    if alpha < 0:
        raise ValueError("filter scale alpha must be >= 0")
    sym = 1.0 + alpha * alpha * grid.k_squared
    return OperatorDiag(grid, 1.0 / sym if invert else sym)


def apply_stokes(f: SpectralField, power: float) -> SpectralField:
    """Fractional Stokes power A^s via the eigenfunction expansion."""
    if power < 0:
        zero_mode = np.max(np.abs(f.coeffs[:, 0, 0, 0]))
        if zero_mode > 1e-14 * max(f.max_coeff(), 1e-300):
            raise SingularOperatorError(
                "negative Stokes power applied to a field with a nonzero mean mode"
            )
    return stokes_symbol(f.grid, power).apply(f)


def helmholtz(f: SpectralField, alpha: float, invert: bool = False) -> SpectralField:
    """Apply F = I + alpha^2 A, or its inverse."""
    return helmholtz_symbol(f.grid, alpha, invert).apply(f)


# -- Leray projection ----------------------------------------------------------


def leray_project(grid: Grid, raw: np.ndarray, validate: bool = True) -> SpectralField:
    """Project raw spectral coefficients onto divergence-free fields.

    p(k) = r(k) - k (k.r(k)) / |k|^2; the k = 0 mode is forced to zero
    (mean-free gauge).  Input must be Hermitian.
    """
    raw = np.asarray(raw, dtype=np.complex128)
    if raw.shape != (3, *grid.dims):
        raise InvalidFieldError(f"raw field has shape {raw.shape}, expected {(3, *grid.dims)}")
    if validate:
        scale = max(float(np.max(np.abs(raw))), 1e-300)
        if hermitian_violation(raw) > HERMITIAN_TOL * scale:
            raise InvalidFieldError("Leray projection input is not Hermitian")
    k = grid.wavenumbers
    kdot = np.sum(k * raw, axis=0)
    out = raw - k * (kdot / grid.k_squared_safe)
    out[:, 0, 0, 0] = 0.0
    out = out * grid.dealias_mask
    return SpectralField(grid, out)


def project(f: SpectralField) -> SpectralField:
    return leray_project(f.grid, f.coeffs, validate=False)


def project_physical(grid: Grid, values: np.ndarray) -> SpectralField:
    """FFT, dealias-truncate and Leray-project a real grid field."""
    return project(SpectralField.from_physical(grid, values))


# -- pseudo-spectral nonlinear kernels ------------------------------------------


def _phys(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifftn(coeffs * grid.npoints, axes=(-3, -2, -1)))


def _partials_physical(f: SpectralField) -> np.ndarray:
    """All partial derivatives d_i f_j in physical space, shape (3, 3, ...)."""
    k = f.grid.wavenumbers  # (3, n1, n2, n3)
    dcoeffs = 1j * k[:, None] * f.coeffs[None, :]  # (i, j, ...)
    return _phys(f.grid, dcoeffs)


def trilinear_b(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """b(u,v,w) = sum_ij int u_i d_i v_j w_j dx, alias-free quadrature."""
    _require_same_grid(u, v)
    _require_same_grid(u, w)
    up = u.to_physical()
    wp = w.to_physical()
    dv = _partials_physical(v)
    total = np.einsum("ixyz,ijxyz,jxyz->", up, dv, wp)
    return float(total * u.grid.cell_volume)


def btilde(u: SpectralField, v: SpectralField) -> SpectralField:
    """Divergence-free representative of Bt(u,v).

    <Bt(u,v), w> = b(u,v,w) - b(w,v,u) for all divergence-free w, realized as
    P[(u.grad)v - (grad v)^T u].
    """
    _require_same_grid(u, v)
    grid = u.grid
    up = u.to_physical()
    dv = _partials_physical(v)
    adv = np.einsum("ixyz,ijxyz->jxyz", up, dv)  # (u.grad)v
    pullback = np.einsum("jxyz,ijxyz->ixyz", up, dv)  # (grad v)^T u
    coeffs = np.fft.fftn(adv - pullback, axes=(1, 2, 3)) / grid.npoints
    coeffs *= grid.dealias_mask
    return leray_project(grid, coeffs, validate=False)


def btilde_pair(u: SpectralField, v: SpectralField, w: SpectralField) -> float:
    """<Bt(u,v), w> evaluated directly from the trilinear form."""
    return trilinear_b(u, v, w) - trilinear_b(w, v, u)


def _advect(grid: Grid, a_phys: np.ndarray, b: SpectralField) -> np.ndarray:
    """(a.grad)b in physical space."""
    db = _partials_physical(b)
    return np.einsum("ixyz,ijxyz->jxyz", a_phys, db)


def linearized_rhs(ybar: SpectralField, z: SpectralField, alpha: float) -> SpectralField:
    """Derivative of y -> Bt(y, F y) at ybar applied to z.

    Equals Bt(z, F ybar) + Bt(ybar, F z).
    """
    fy = helmholtz(ybar, alpha)
    fz = helmholtz(z, alpha)
    return btilde(z, fy) + btilde(ybar, fz)


def linearized_rhs_adjoint(
    ybar: SpectralField, lam: SpectralField, alpha: float
) -> SpectralField:
    """Exact L2 transpose of linearized_rhs(ybar, ., alpha) on divergence-free fields.

    Equals -Bt(lam, F ybar) + F P[(lam.grad)ybar - (ybar.grad)lam]; the dual
    pairing reproduces bt(ybar, w + a^2 A w, lam) + bt(w, ybar + a^2 A ybar, lam).
    """
    grid = ybar.grid
    fy = helmholtz(ybar, alpha)
    first = btilde(lam, fy)
    lp = lam.to_physical()
    yp = ybar.to_physical()
    mixed = _advect(grid, lp, ybar) - _advect(grid, yp, lam)
    coeffs = np.fft.fftn(mixed, axes=(1, 2, 3)) / grid.npoints
    coeffs *= grid.dealias_mask
    second = helmholtz(leray_project(grid, coeffs, validate=False), alpha)
    return second - first
