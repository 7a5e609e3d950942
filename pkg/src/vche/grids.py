"""Periodic Fourier grid: wavenumbers, dealias mask, quadrature weights.

The computational domain is the periodic box [0, L1) x [0, L2) x [0, L3).
A real vector field is represented by its truncated Fourier series

    f(x) = sum_k fhat(k) exp(i k.x),   k_j = 2*pi*m_j / L_j,

with integer mode indices m_j in numpy FFT order.  The retained mode set is
symmetric about zero (Nyquist modes are always dropped) and cut off at the
dealias radius, which makes quadratic pseudo-spectral products alias-free on
the collocation grid: per axis the retained |m| <= K with 3K < n when the
dealias fraction is 2/3.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * math.pi


def _axis_cutoff(n: int, dealias: float) -> int:
    """Largest retained |mode index| on an axis of n points.

    Strictly below dealias*n/2, and never the Nyquist mode n/2.  For the
    default 2/3 rule this gives 3K < n, so triple products integrate exactly
    on the collocation grid.
    """
    c = 0.5 * dealias * n
    k = int(math.floor(c))
    if abs(c - round(c)) < 1e-9:
        k = int(round(c)) - 1
    return min(max(k, 1), n // 2 - 1)


@dataclass(frozen=True)
class Grid:
    """Fourier discretization of the periodic box.

    dims: modes per axis, each even and >= 4.
    box:  box edge lengths (default 2*pi each).
    dealias: retained fraction of the spectrum in (0, 1], default 2/3.
    """

    dims: tuple[int, int, int]
    box: tuple[float, float, float] = (TWO_PI, TWO_PI, TWO_PI)
    dealias: float = 2.0 / 3.0

    def __post_init__(self):
        if len(self.dims) != 3 or len(self.box) != 3:
            raise ValueError("grid is three-dimensional")
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "box", tuple(float(b) for b in self.box))
        for n in self.dims:
            if n < 4 or n % 2 != 0:
                raise ValueError(f"each axis needs >= 4 even modes, got {n}")
        for b in self.box:
            if b <= 0:
                raise ValueError("box lengths must be positive")
        if not 0.0 < self.dealias <= 1.0:
            raise ValueError("dealias fraction must lie in (0, 1]")

    # -- sizes and measures -------------------------------------------------

    @property
    def npoints(self) -> int:
        n1, n2, n3 = self.dims
        return n1 * n2 * n3

    @property
    def volume(self) -> float:
        b1, b2, b3 = self.box
        return b1 * b2 * b3

    @property
    def cell_volume(self) -> float:
        """Quadrature weight of one collocation point."""
        return self.volume / self.npoints

    # -- spectral arrays ----------------------------------------------------

    @cached_property
    def mode_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Integer mode indices m_j per axis, numpy FFT order."""
        return tuple(
            np.fft.fftfreq(n, d=1.0 / n).astype(np.int64) for n in self.dims
        )

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Physical wavenumber vectors, shape (3, n1, n2, n3)."""
        m1, m2, m3 = self.mode_index
        k1 = (TWO_PI / self.box[0]) * m1
        k2 = (TWO_PI / self.box[1]) * m2
        k3 = (TWO_PI / self.box[2]) * m3
        kx, ky, kz = np.meshgrid(k1, k2, k3, indexing="ij")
        return np.stack([kx, ky, kz])

    @cached_property
    def k_squared(self) -> np.ndarray:
        k = self.wavenumbers
        return k[0] ** 2 + k[1] ** 2 + k[2] ** 2

    @cached_property
    def k_squared_safe(self) -> np.ndarray:
        ks = self.k_squared.copy()
        ks[0, 0, 0] = 1.0
        return ks

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Boolean keep-mask over modes; symmetric, Nyquist-free."""
        keep = []
        for n, m in zip(self.dims, self.mode_index):
            keep.append(np.abs(m) <= _axis_cutoff(n, self.dealias))
        kx, ky, kz = np.meshgrid(*keep, indexing="ij")
        return kx & ky & kz

    @cached_property
    def k_min_nonzero(self) -> float:
        """Smallest nonzero |k|; the discrete Poincare constant is its inverse."""
        return TWO_PI / max(self.box)

    def same_as(self, other: "Grid") -> bool:
        return (
            self.dims == other.dims
            and self.box == other.box
            and abs(self.dealias - other.dealias) < 1e-15
        )

    def mesh(self) -> np.ndarray:
        """Collocation points, shape (3, n1, n2, n3)."""
        axes = [
            np.arange(n) * (b / n) for n, b in zip(self.dims, self.box)
        ]
        x, y, z = np.meshgrid(*axes, indexing="ij")
        return np.stack([x, y, z])
