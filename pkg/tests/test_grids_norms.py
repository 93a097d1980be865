import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from dbarlab.errors import ConfigError, SupportViolatesD
from dbarlab.grids_norms import (EnergyContext, SpatialGrid, SpectralGrid, build_potential,
                                 fourier_transform, lp_nu_norm, potential_from_samples,
                                 sobolev_norm_m1, weighted_fourier_norm)


def unit_bump_mass(R=0.5):
    f = lambda s: np.exp(1 - 1 / (1 - s * s)) * s
    return 2 * np.pi * R * R * quad(f, 0, 1, limit=200)[0]


def test_zero_potential(grid64):
    v = build_potential("zero", (), grid64)
    assert v.is_zero and not np.any(v.values)


def test_bump_peak_and_boundary(grid64):
    v = build_potential("bump", (1.0, 0.5), grid64)
    c = grid64.n // 2
    assert v.values[c, c] == pytest.approx(1.0, abs=1e-15)
    assert v.values.max() == pytest.approx(1.0, abs=1e-15)
    th = np.linspace(0, 2 * np.pi, 50)
    assert np.all(v.sample(np.cos(th), np.sin(th)) == 0)


def test_bump_outside_disc_rejected(grid64):
    with pytest.raises(SupportViolatesD):
        build_potential("bump", (1.0, 0.6, 0.5, 0.0), grid64)


def test_samples_outside_disc_rejected(grid32):
    vals = np.zeros((32, 32))
    vals[0, 0] = 1.0
    with pytest.raises(SupportViolatesD):
        potential_from_samples(vals, grid32)


def test_two_bumps_zero_mean(grid64):
    v = build_potential("two_bumps", (1.0, -1.0, 0.3, 0.4, 0.1), grid64)
    mass = np.sum(np.abs(v.values)) * grid64.h ** 2
    assert abs(np.sum(v.values) * grid64.h ** 2) <= 1e-12 * mass


def test_energy_context():
    e = EnergyContext(7.0)
    assert e.sqrtE ** 2 == pytest.approx(7.0, rel=1e-15)
    with pytest.raises(ConfigError):
        EnergyContext(0.0)


def test_spectral_grid_symmetric():
    g = SpectralGrid()
    r = g.radii
    assert np.allclose(r * r[::-1], 1.0, rtol=1e-13)
    assert not np.any(np.isclose(r, 1.0))
    assert g.lambda_min * g.lambda_max == pytest.approx(1.0)


@given(st.floats(1.5, 20.0), st.integers(2, 40))
def test_spectral_grid_symmetric_any(lmax, half):
    g = SpectralGrid(lmax, 2 * half, 8, 16, 1e-6)
    g.check_symmetric()
    assert g.radii[0] == pytest.approx(1 / lmax) and g.radii[-1] == pytest.approx(lmax)


def test_spectral_grid_offset_guard():
    with pytest.raises(ConfigError):
        SpectralGrid(8.0, 64, 64, 256, 0.5)


def test_sobolev_zero(grid64):
    assert sobolev_norm_m1(build_potential("zero", (), grid64), 3) == 0.0


def test_sobolev_mass_matches_quadrature(grid64):
    v = build_potential("bump", (2.0, 0.5), grid64)
    assert sobolev_norm_m1(v, 0) == pytest.approx(2.0 * unit_bump_mass(), rel=1e-2)


@pytest.mark.parametrize("m", [0, 1, 2])
def test_sobolev_homogeneous_and_monotone(bump64, m):
    a = sobolev_norm_m1(bump64, m)
    assert sobolev_norm_m1(bump64.scaled(2.0), m) == pytest.approx(2 * a, rel=1e-12)
    assert sobolev_norm_m1(bump64, m + 1) >= a


def test_fourier_transform_at_zero(bump64):
    p, F = fourier_transform(bump64)
    assert F[0, 0].real == pytest.approx(unit_bump_mass() / (2 * np.pi) ** 2, rel=1e-3)


def test_weighted_fourier_norm_properties(grid32):
    v = build_potential("bump", (1.0, 0.5), grid32)
    assert weighted_fourier_norm(build_potential("zero", (), grid32), 2) == 0.0
    vals = [weighted_fourier_norm(v, m) for m in (1, 2, 3)]
    assert vals[0] < vals[1] < vals[2]
    p, F = fourier_transform(v)
    assert vals[0] >= np.max(np.abs(F))
    assert weighted_fourier_norm(v.scaled(-3.0), 2) == pytest.approx(3 * vals[1], rel=1e-12)


def test_weighted_fourier_norm_refinement():
    a = weighted_fourier_norm(build_potential("bump", (1.0, 0.5), SpatialGrid(64)), 2)
    b = weighted_fourier_norm(build_potential("bump", (1.0, 0.5), SpatialGrid(128)), 2)
    assert abs(a - b) <= 0.05 * b


def test_lp_nu_norm_constant():
    g = SpectralGrid(8.0, 64, 64)
    assert lp_nu_norm(np.zeros(g.lam.shape), g, 2, 0) == 0.0
    # two unit-disc L2 norms of 1, up to the disc beyond lambda_max being absent
    assert lp_nu_norm(np.ones(g.lam.shape), g, 2, 0) == pytest.approx(2 * np.sqrt(np.pi), rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3), st.floats(1, 4), st.floats(0, 2))
def test_lp_nu_norm_homogeneous(c, p, nu):
    g = SpectralGrid(4.0, 16, 8, 16)
    f = np.cos(np.abs(g.lam)) * np.exp(1j * np.angle(g.lam))
    assert lp_nu_norm(c * f, g, p, nu) == pytest.approx(abs(c) * lp_nu_norm(f, g, p, nu), rel=1e-12)


def test_lp_nu_norm_needs_grid_shape():
    g = SpectralGrid(4.0, 16, 8, 16)
    with pytest.raises(ConfigError):
        lp_nu_norm(np.ones((3, 3)), g, 2, 0)
