"""Divergence-free spectral vector fields and their basic calculus.

Coefficients are stored as Fourier-series amplitudes fhat with

    f(x) = sum_k fhat(k) exp(i k.x),

i.e. fhat = fftn(f) / N in numpy conventions, shape (3, n1, n2, n3).
All velocity-type fields are kept mean-free (zero k=0 mode), Hermitian
(real in physical space) and supported on the grid's dealias mask.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .exceptions import GridMismatchError, InvalidFieldError
from .grids import Grid

HERMITIAN_TOL = 1e-12


def _conj_reverse(coeffs: np.ndarray) -> np.ndarray:
    """conj(c(-k)) laid out on the +k index set."""
    out = np.conj(coeffs)
    for ax in (1, 2, 3):
        out = np.roll(np.flip(out, axis=ax), 1, axis=ax)
    return out


def hermitian_violation(coeffs: np.ndarray) -> float:
    """Max |c(k) - conj(c(-k))| over all modes."""
    return float(np.max(np.abs(coeffs - _conj_reverse(coeffs))))


@dataclass
class SpectralField:
    """Truncated Fourier representation of a real 3-vector field."""

    grid: Grid
    coeffs: np.ndarray  # complex128, shape (3, n1, n2, n3)

    def __post_init__(self):
        expected = (3, *self.grid.dims)
        if self.coeffs.shape != expected:
            raise InvalidFieldError(
                f"coefficient array has shape {self.coeffs.shape}, expected {expected}"
            )

    # -- constructors --------------------------------------------------------

    @classmethod
    def zeros(cls, grid: Grid) -> "SpectralField":
        return cls(grid, np.zeros((3, *grid.dims), dtype=np.complex128))

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray) -> "SpectralField":
        """Transform a real grid field, truncating to the dealias mask."""
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (3, *grid.dims):
            raise InvalidFieldError(
                f"physical field has shape {values.shape}, expected {(3, *grid.dims)}"
            )
        coeffs = np.fft.fftn(values, axes=(1, 2, 3)) / grid.npoints
        coeffs *= grid.dealias_mask
        return cls(grid, coeffs)

    def to_physical(self) -> np.ndarray:
        """Real collocation values, shape (3, n1, n2, n3)."""
        return np.real(
            np.fft.ifftn(self.coeffs * self.grid.npoints, axes=(1, 2, 3))
        )

    def copy(self) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs.copy())

    # -- arithmetic -----------------------------------------------------------

    def __add__(self, other: "SpectralField") -> "SpectralField":
        _require_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        _require_same_grid(self, other)
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self) -> "SpectralField":
        return SpectralField(self.grid, -self.coeffs)

    # -- diagnostics ----------------------------------------------------------

    def max_coeff(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def divergence_violation(self) -> float:
        """Max |k.coeff(k)| over modes (0 for a divergence-free field)."""
        k = self.grid.wavenumbers
        return float(np.max(np.abs(np.sum(k * self.coeffs, axis=0))))

    def validate(self, div_tol: float = 1e-12) -> None:
        """Check Hermitian symmetry, divergence and dealias support."""
        scale = max(self.max_coeff(), 1e-300)
        if hermitian_violation(self.coeffs) > HERMITIAN_TOL * scale:
            raise InvalidFieldError("field is not Hermitian (complex in physical space)")
        if self.divergence_violation() > div_tol * scale:
            raise InvalidFieldError("field is not divergence-free")
        if np.any(np.abs(self.coeffs[:, ~self.grid.dealias_mask]) > 0):
            raise InvalidFieldError("field has energy outside the dealias radius")


def _require_same_grid(f: SpectralField, g: SpectralField) -> None:
    if not f.grid.same_as(g.grid):
        raise GridMismatchError("fields live on different grids")


# -- inner products and norms ---------------------------------------------------


def inner(f: SpectralField, g: SpectralField) -> float:
    """L2 inner product int f.g dx via Parseval."""
    _require_same_grid(f, g)
    return float(
        np.real(np.sum(f.coeffs * np.conj(g.coeffs))) * f.grid.volume
    )


def norms(f: SpectralField) -> dict:
    """l2 = |f|, h1 = |grad f| (the V-seminorm), da = |A f|.

    Parseval sums over retained modes; on mean-free fields
    l2 <= h1 / k_min (discrete Poincare).
    """
    power = np.sum(np.abs(f.coeffs) ** 2, axis=0)
    ks = f.grid.k_squared
    vol = f.grid.volume
    l2 = np.sqrt(vol * np.sum(power))
    h1 = np.sqrt(vol * np.sum(ks * power))
    da = np.sqrt(vol * np.sum(ks * ks * power))
    return {"l2": float(l2), "h1": float(h1), "da": float(da)}


def l2_norm(f: SpectralField) -> float:
    return float(np.sqrt(max(inner(f, f), 0.0)))


# -- random smooth test fields ---------------------------------------------------


def random_divfree(
    grid: Grid, rng: np.random.Generator, amplitude: float = 1.0, decay: float = 1.0
) -> SpectralField:
    """Random smooth mean-free divergence-free field (for tests and probes)."""
    from .operators import leray_project  # local import to avoid a cycle

    raw = rng.standard_normal((3, *grid.dims))
    f = SpectralField.from_physical(grid, raw)
    damp = np.exp(-decay * grid.k_squared / max(grid.k_min_nonzero**2, 1e-30))
    f = SpectralField(grid, f.coeffs * damp)
    f = leray_project(grid, f.coeffs)
    scale = l2_norm(f)
    if scale > 0:
        f = f * (amplitude / scale)
    return f


# -- snapshot file format ---------------------------------------------------------
#
# Binary layout (little-endian):
#   magic   8 bytes  b"VCHFLD1\n"
#   dims    3 x int64
#   box     3 x float64
#   dealias 1 x float64
#   coeffs  3*n1*n2*n3 x complex128, C order, components outermost, per-axis
#           modes in numpy FFT order (0, 1, ..., n/2-1, -n/2, ..., -1).
# Round-trips are bit-exact.

SNAPSHOT_MAGIC = b"VCHFLD1\n"


def write_snapshot(f: SpectralField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<3q", *f.grid.dims))
        fh.write(struct.pack("<3d", *f.grid.box))
        fh.write(struct.pack("<d", f.grid.dealias))
        fh.write(np.ascontiguousarray(f.coeffs, dtype=np.complex128).tobytes())


def read_snapshot(path) -> SpectralField:
    with open(path, "rb") as fh:
        magic = fh.read(len(SNAPSHOT_MAGIC))
        if magic != SNAPSHOT_MAGIC:
            raise InvalidFieldError(f"{path}: not a field snapshot")
        dims = struct.unpack("<3q", fh.read(24))
        box = struct.unpack("<3d", fh.read(24))
        (dealias,) = struct.unpack("<d", fh.read(8))
        grid = Grid(tuple(dims), tuple(box), dealias)
        raw = fh.read()
    coeffs = np.frombuffer(raw, dtype=np.complex128).reshape((3, *dims)).copy()
    return SpectralField(grid, coeffs)
