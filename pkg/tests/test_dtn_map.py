import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special
from scipy.integrate import solve_ivp

from dbarlab.dtn_map import (assemble_dtn, bessel_dtn_eigenvalue, boundary_nodes, mode_numbers,
                             opnorm_linf, perturb_dtn)
from dbarlab.errors import ConfigError, DirichletEigenvalueHit
from dbarlab.grids_norms import build_potential, bump_evaluator

E = 25.0


def radial_dtn(n, E, amp=1.0, R=0.5):
    """u'(1)/u(1) for the mode r^n-regular radial solution, by ODE integration."""
    ev = bump_evaluator(amp, R)

    def rhs(r, y):
        v = float(ev(np.array(r), np.array(0.0)))
        return [y[1], -y[1] / r - (E - v - n * n / r ** 2) * y[0]]

    r0 = 1e-3
    # leading terms of the regular Bessel solution (v is flat near 0)
    k = np.sqrt(E - float(ev(np.array(0.0), np.array(0.0))))
    y0 = [special.jv(n, k * r0), k * special.jvp(n, k * r0)]
    sol = solve_ivp(rhs, (r0, 1.0), y0, rtol=1e-11, atol=1e-14, method="DOP853")
    u, du = sol.y[:, -1]
    return du / u


@pytest.fixture(scope="module")
def phi_bump(bump32):
    return assemble_dtn(bump32, E)


def test_free_eigenvalues(grid32):
    phi = assemble_dtn(build_potential("zero", (), grid32), E)
    modes = mode_numbers(64)
    beta = np.diag(phi.fourier).real
    for n in (0, 1, 5, -7):
        i = list(modes).index(n)
        # J_n'/J_n from the recurrence J_n' = J_{n-1} - n J_n / x
        k = np.sqrt(E)
        ref = k * (special.jv(n - 1, k) - n / k * special.jv(n, k)) / special.jv(n, k)
        assert beta[i] == pytest.approx(ref, rel=1e-12)
        assert bessel_dtn_eigenvalue(n, E) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("n", [0, 1, 3])
def test_radial_potential_eigenvalues(phi_bump, n):
    i = list(mode_numbers(64)).index(n)
    ref = radial_dtn(n, E)
    assert phi_bump.fourier[i, i].real == pytest.approx(ref, rel=1e-3)


def test_radial_potential_is_diagonal(phi_bump):
    F = phi_bump.fourier[1:, 1:]
    off = F - np.diag(np.diag(F))
    assert np.max(np.abs(off)) <= 1e-6 * np.max(np.abs(F))


def test_real_symmetric(phi_bump):
    M = phi_bump.matrix
    assert np.max(np.abs(M.imag)) <= 1e-10 * np.max(np.abs(M))
    assert np.max(np.abs(M - M.T)) <= 1e-10 * np.max(np.abs(M))


def test_constant_data_free():
    # v = 0, boundary data 1 is mode 0: Neumann data is beta_0 everywhere
    from dbarlab.grids_norms import SpatialGrid
    phi = assemble_dtn(build_potential("zero", (), SpatialGrid(16)), E)
    assert np.allclose(phi.matrix @ np.ones(64), bessel_dtn_eigenvalue(0, E), atol=1e-10)


def test_guards(grid32):
    v0 = build_potential("zero", (), grid32)
    with pytest.raises(ConfigError):
        assemble_dtn(v0, E, N_b=16)
    j01 = special.jn_zeros(0, 1)[0]
    with pytest.raises(DirichletEigenvalueHit):
        assemble_dtn(v0, j01 ** 2)


def test_boundary_nodes():
    nodes = boundary_nodes(64)
    assert np.allclose(np.hypot(nodes[:, 0], nodes[:, 1]), 1.0)
    assert mode_numbers(64)[0] == -32 and mode_numbers(64)[-1] == 31


def test_opnorm():
    assert opnorm_linf(np.zeros((0, 0))) == 0.0
    A = np.array([[1.0, -2.0], [0.5, 0.5]])
    assert opnorm_linf(A) == 3.0


@settings(max_examples=15, deadline=None)
@given(st.floats(1e-8, 1.0), st.integers(0, 2 ** 16), st.sampled_from(["rank_one", "random_uniform"]))
def test_perturbation_distance(phi_bump, delta, seed, mode):
    P = perturb_dtn(phi_bump, delta, mode, seed)
    assert P.diagnostics["delta"] == pytest.approx(delta, rel=1e-10)
    D = P.matrix - phi_bump.matrix
    assert np.allclose(D, D.T) and not np.iscomplexobj(D.real)
    assert np.array_equal(P.matrix, perturb_dtn(phi_bump, delta, mode, seed).matrix)


def test_perturbation_edges(phi_bump):
    assert np.array_equal(perturb_dtn(phi_bump, 0.0).matrix, phi_bump.matrix)
    with pytest.raises(ConfigError):
        perturb_dtn(phi_bump, -1.0)
    with pytest.raises(ConfigError):
        perturb_dtn(phi_bump, 1e-3, "whatever")
    with pytest.raises(ConfigError):
        perturb_dtn(phi_bump, 1e-3, "second_potential")
