"""Field snapshot format and structural validation."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vche.exceptions import GridMismatchError, InvalidFieldError
from vche.fields import (
    SpectralField,
    hermitian_violation,
    random_divfree,
    read_snapshot,
    write_snapshot,
)
from vche.grids import Grid


def test_snapshot_roundtrip_bit_exact(tmp_path, grid8, rng):
    f = random_divfree(grid8, rng)
    path = tmp_path / "field.bin"
    write_snapshot(f, path)
    g = read_snapshot(path)
    assert g.grid.same_as(f.grid)
    assert np.array_equal(g.coeffs, f.coeffs)  # bit exact
    # two writes produce identical bytes
    path2 = tmp_path / "field2.bin"
    write_snapshot(g, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"this is not a field snapshot")
    with pytest.raises(InvalidFieldError):
        read_snapshot(p)


def test_snapshot_anisotropic_box(tmp_path, rng):
    grid = Grid((8, 4, 6), box=(2 * np.pi, np.pi, 4.0))
    f = random_divfree(grid, rng)
    path = tmp_path / "aniso.bin"
    write_snapshot(f, path)
    g = read_snapshot(path)
    assert g.grid.dims == (8, 4, 6)
    assert np.array_equal(g.coeffs, f.coeffs)


def test_from_physical_roundtrip(grid8, rng):
    f = random_divfree(grid8, rng)
    g = SpectralField.from_physical(grid8, f.to_physical())
    assert np.max(np.abs(g.coeffs - f.coeffs)) <= 1e-14 * max(f.max_coeff(), 1e-300)


def test_hermitian_violation_detects_asymmetry(grid8):
    coeffs = np.zeros((3, *grid8.dims), dtype=complex)
    coeffs[0, 1, 0, 0] = 1.0j
    assert hermitian_violation(coeffs) > 0.5
    coeffs[0, -1, 0, 0] = -1.0j  # the conjugate partner
    assert hermitian_violation(coeffs) == 0.0


def test_validate_flags_divergence(grid8):
    coeffs = np.zeros((3, *grid8.dims), dtype=complex)
    coeffs[0, 1, 0, 0] = 1.0  # k || coeff: not divergence-free
    coeffs[0, -1, 0, 0] = 1.0
    f = SpectralField(grid8, coeffs)
    with pytest.raises(InvalidFieldError):
        f.validate()


def test_grid_mismatch_raises(rng):
    a = random_divfree(Grid((8, 8, 8)), rng)
    b = random_divfree(Grid((4, 4, 4)), rng)
    with pytest.raises(GridMismatchError):
        _ = a + b


@settings(max_examples=15, deadline=None)
@given(
    n=st.sampled_from([4, 8]),
    seed=st.integers(0, 2**31),
    amp=st.floats(0.01, 10.0),
)
def test_snapshot_roundtrip_property(tmp_path_factory, n, seed, amp):
    grid = Grid((n, n, n))
    f = random_divfree(grid, np.random.default_rng(seed), amplitude=amp)
    path = tmp_path_factory.mktemp("snaps") / "f.bin"
    write_snapshot(f, path)
    assert np.array_equal(read_snapshot(path).coeffs, f.coeffs)
