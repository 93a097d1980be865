import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special
from scipy.integrate import quad

from dbarlab.errors import InconsistentPair, ZeroLambda
from dbarlab.grids_norms import SpectralGrid, build_potential
from dbarlab.scattering_transform import (TorusKernel, b_frequency, b_on_grid, compute_b,
                                          compute_scattering, decay_slope, diff_f_kernel,
                                          h12_from_hpm, heaviside, hpm_from_f, r_of_lambda,
                                          r_of_z_lambda, r_on_grid, r_phase, rho_phase,
                                          side_mask, solve_rho, torus_decay_profile)

E = 25.0


def born_b(p, amp=1.0, R=0.5):
    """(2pi)^-2 int exp(i p.x) v dx for the radial bump, by Hankel quadrature."""
    f = lambda s: np.exp(1 - 1 / (1 - s * s)) * special.j0(p * R * s) * s
    return amp * R * R * quad(f, 0, 1, limit=400)[0] / (2 * np.pi)


def test_free_data(grid32):
    g = SpectralGrid(4.0, 8, 8, 16)
    s = compute_scattering(build_potential("zero", (), grid32), E, g, N_T=16)
    assert not np.any(s.r_values) and not np.any(s.rho_values)


@pytest.mark.parametrize("lam", [1.5, 0.4 + 0.3j, 3.0j])
def test_born_limit(bump32, lam):
    eps = 1e-4
    b = compute_b(bump32.scaled(eps), lam, E) / eps
    p = np.hypot(*b_frequency(lam, E))
    assert b == pytest.approx(born_b(p), rel=1e-3, abs=1e-6)


def test_b_frequency_modulus():
    lam = 1.7 * np.exp(0.8j)
    p = b_frequency(lam, E)
    assert np.hypot(*p) == pytest.approx(np.sqrt(E) * (abs(lam) + 1 / abs(lam)))


def test_b_symmetry_shortcut(bump32):
    g = SpectralGrid(3.0, 4, 8, 16)
    full = b_on_grid(bump32, E, g, use_symmetry=False)
    half = b_on_grid(bump32, E, g)
    # agreement is limited by the iterative-solve tolerance, not by the identity
    assert np.max(np.abs(full - half)) <= 1e-4 * np.max(np.abs(full))


def test_r_formula():
    lam = 2.0 + 1.0j
    assert r_of_lambda(1.0, lam) == pytest.approx(np.pi / np.conj(lam))
    assert r_of_lambda(1.0, 0.5) == pytest.approx(-2 * np.pi)
    assert r_of_lambda(3.0, 1j) == 0
    with pytest.raises(ZeroLambda):
        r_of_lambda(1.0, 0)
    g = SpectralGrid(3.0, 4, 8, 16)
    b = np.ones(g.lam.shape)
    assert np.allclose(r_on_grid(b, g).ravel(), [r_of_lambda(1.0, l) for l in g.lam.ravel()])


@given(st.complex_numbers(max_magnitude=3), st.complex_numbers(min_magnitude=0.1, max_magnitude=10))
def test_phases_unimodular(z, lam):
    assert abs(r_phase(z, lam, E)) == pytest.approx(1.0)
    l1, l2 = np.exp(1j * z.real), np.exp(1j * lam.real)
    assert abs(rho_phase(z, l1, l2, E)) == pytest.approx(1.0)
    assert r_of_z_lambda(2.0, 0, lam, E) == pytest.approx(2.0)


def test_heaviside_and_masks():
    assert list(heaviside([-1.0, 0.0, 2.0])) == [0.0, 0.5, 1.0]
    p, m = side_mask(16, "plus"), side_mask(16, "minus")
    assert np.allclose(p + m, 1.0)


def random_kernel(N, scale, seed=0):
    rng = np.random.default_rng(seed)
    return TorusKernel(scale * (rng.standard_normal((N, N)) + 1j * rng.standard_normal((N, N))), "f")


@pytest.mark.parametrize("side", ["plus", "minus"])
def test_hpm_solves_its_equation(side):
    N = 24
    f = random_kernel(N, 0.02)
    h = hpm_from_f(f, side).values
    w = 2 * np.pi / N
    th = side_mask(N, side)
    # h(l, l') - pi i sum_l'' h(l, l'') theta(l, l'') f(l'', l') w = f(l, l')
    res = h - np.pi * 1j * w * (h * th) @ f.values - f.values
    assert np.max(np.abs(res)) <= 1e-12


def test_h12_masks():
    N = 16
    hp, hm = random_kernel(N, 1.0, 1), random_kernel(N, 1.0, 2)
    hp.kind, hm.kind = "h_plus", "h_minus"
    h1, h2 = h12_from_hpm(hp, hm)
    d = (np.arange(N)[None, :] - np.arange(N)[:, None]) % N
    up = (d > 0) & (d < N // 2)  # sin(arg l' - arg l) > 0
    assert np.allclose(h1.values[up], -hm.values[up]) and np.allclose(h2.values[up], -hp.values[up])


def test_rho_pair_check():
    N = 16
    hp, hm = random_kernel(N, 0.05, 1), random_kernel(N, 0.05, 2)
    hp.kind, hm.kind = "h_plus", "h_minus"
    h1, h2 = h12_from_hpm(hp, hm)
    with pytest.raises(InconsistentPair):
        solve_rho(h1, h2, check=True, tol=1e-6)
    assert solve_rho(h1, h2, check=False).diagnostics["pair_discrepancy"] > 0


def test_rho_pair_consistent_for_potential(bump32):
    s = compute_scattering(bump32, E, SpectralGrid(3.0, 4, 4, 16), N_T=64, check_pair=True)
    assert s.diagnostics["pair_discrepancy"] <= 1e-2
    # trivial jump kernel on the diagonal-free torus has the expected size
    assert np.max(np.abs(s.rho_values)) > 0


def test_diff_f_kernel_zero_when_equal():
    D = np.eye(64)
    tr = np.ones((8, 64), complex)
    assert not np.any(diff_f_kernel(D, D, tr, tr))


def test_decay_helpers():
    x = np.logspace(0, 3, 20)
    assert decay_slope(x, 5 * x ** -1.5) == pytest.approx(-1.5)
    K = np.ones((8, 8))
    w, amp = torus_decay_profile(K, E)
    assert w[0] == 1.0 and np.all(amp == 1)
