import numpy as np
import pytest

from dbarlab.errors import ConfigError
from dbarlab.grids_norms import SpatialGrid, SpectralGrid
from dbarlab.rh_solver import (LogPolarGrid, RHSolver, build_r_z, cauchy_boundary, cauchy_solid,
                               cauchy_solid_anchored, dz_mu_minus1_abc, mu_minus1_at,
                               reconstruct_v, solve_e, solve_X, work_grid_for)
from dbarlab.scattering_transform import ScatteringData

from conftest import slope

G = LogPolarGrid(np.log(4.0), 64, 32)


def disc_transform(lam, R=1.0):
    """dbar^{-1} of the indicator of |lambda| < R: conj(lambda) inside, R^2/lambda outside."""
    lam = np.asarray(lam, complex)
    return np.where(np.abs(lam) < R, np.conj(lam), R * R / np.where(lam == 0, 1, lam))


def test_disc_indicator():
    f = (G.radii[:, None] < 1.0) * np.ones(G.shape)
    u = cauchy_solid(f, G)
    assert np.max(np.abs(u - disc_transform(G.lam))) <= 1e-3
    pts = np.array([0.3 + 0.2j, 2.5j, -1.7])
    assert np.allclose(cauchy_solid(f, G, pts), disc_transform(pts), atol=1e-3)


def test_anchored_vanishes_at_anchor():
    f = np.exp(-np.abs(G.lam) ** 2) * (1 + G.lam.real)
    zeta = np.exp(0.7j)
    out = cauchy_solid_anchored(f, zeta, G, np.array([zeta, 0.5]))
    assert abs(out[0]) <= 1e-10
    grid_vals = cauchy_solid_anchored(f, zeta, G)
    plain = cauchy_solid(f, G)
    assert np.allclose(grid_vals - plain, grid_vals[0, 0] - plain[0, 0])


def test_outer_decay_slope():
    # f supported in |lambda| <= 1: |dbar^{-1} f| <= c |lambda|^(2/p - 1); with nonzero mass
    # the transform decays exactly like 1/|lambda|
    f = (G.radii[:, None] < 1.0) * (2.0 + np.cos(G.angles)[None, :])
    t = np.linspace(1.5, 4.0, 12)
    vals = np.abs(cauchy_solid(f, G, t * np.exp(0.3j)))
    s = slope(t, vals)
    p = 4.0
    assert s <= (2 / p - 1) * 0.75
    assert s == pytest.approx(-1.0, abs=0.1)


def test_anchored_local_slope():
    # |anchored transform| <= c |lambda - zeta|^(1 - 2/p)
    f = np.exp(-np.abs(G.lam) ** 2)
    zeta = 0.6 + 0.1j
    d = np.logspace(-3, -1, 8)
    vals = np.abs(cauchy_solid_anchored(f, zeta, G, zeta + d * np.exp(0.4j)))
    p = 4.0
    assert slope(d, vals) >= (1 - 2 / p) * 0.75


def test_tail_check():
    f = np.ones(G.shape)
    from dbarlab.errors import SolverError
    with pytest.raises(SolverError):
        cauchy_solid(f, G, check_tail=True)


def test_plemelj_jump():
    th = 2 * np.pi * np.arange(128) / 128
    u = np.exp(np.cos(th))
    lam = np.exp(1j * th)
    jump = cauchy_boundary(u, "plus", lam) - cauchy_boundary(u, "minus", lam)
    assert np.max(np.abs(jump - u)) <= 1e-3


@pytest.mark.parametrize("lam", [0.4 + 0.1j, 1.6 - 0.8j])
def test_cauchy_boundary_off_circle(lam):
    N = 256
    th = 2 * np.pi * np.arange(N) / N
    zeta = np.exp(1j * th)
    u = np.exp(np.cos(th)) * (1 + 0.3j * np.sin(2 * th))
    direct = np.sum(u / (zeta - lam) * 1j * zeta) * (2 * np.pi / N) / (2j * np.pi)
    assert cauchy_boundary(u, "plus", lam) == pytest.approx(direct, abs=1e-12)


def test_grid_validation():
    with pytest.raises(ConfigError):
        LogPolarGrid(1.0, 7, 8)
    with pytest.raises(ConfigError):
        LogPolarGrid(1.0, 8, 3)
    g = LogPolarGrid(np.log(8.0), 64, 32)
    assert np.allclose(g.radii * g.radii[::-1], 1.0)


def test_free_problem():
    sg = SpectralGrid(8.0, 16, 16, 32)
    e, res = solve_e(np.zeros(sg.lam.shape, complex), sg)
    assert np.all(e == 1) and res == 0
    X, _ = solve_X(np.zeros(sg.lam.shape, complex), 1j, "X2", sg)
    assert np.allclose(X, 0.5 / 1j / (1j - sg.lam))
    with pytest.raises(ConfigError):
        solve_X(np.zeros(sg.lam.shape), 0.5, "X1", sg)
    scat = ScatteringData.zero(25.0, sg, 32)
    res = reconstruct_v(scat, SpatialGrid(16), "abc_formula")
    assert not np.any(res.v_rec)


def test_work_grid_rule():
    sg = SpectralGrid()
    for E, shape in ((25.0, (128, 64)), (100.0, (128, 64)), (400.0, (256, 96))):
        g = work_grid_for(ScatteringData.zero(E, sg, 8))
        assert g.shape == shape


@pytest.fixture(scope="module")
def solver(small_scat):
    return RHSolver(small_scat, LogPolarGrid.from_spectral(small_scat.grid))


def test_build_r_z(small_scat):
    assert np.allclose(np.abs(build_r_z(small_scat, 0.3 + 0.2j)), np.abs(small_scat.r_values))


def test_dbar_residual(small_scat):
    # the phase of r(z, .) turns fast near the rims; the difference quotients need a fine grid
    solver = RHSolver(small_scat, LogPolarGrid(np.log(8.0), 256, 256))
    z = 0.3 - 0.2j
    ws = solver.solve(z)
    g = solver.wg
    mu = ws.mu
    lam = g.lam
    # dbar = (d_s + i d_theta) / (2 conj(lambda)) in log-polar coordinates
    ds = (mu[2:, 1:-1] - mu[:-2, 1:-1]) / (2 * g.ds)
    dth_full = (np.roll(mu, -1, axis=1) - np.roll(mu, 1, axis=1)) / (2 * 2 * np.pi / g.n_theta)
    dth = dth_full[1:-1, 1:-1]
    dbar = (ds + 1j * dth) / (2 * np.conj(lam[1:-1, 1:-1]))
    rhs = (ws.r_z * np.conj(mu))[1:-1, 1:-1]
    # keep rows away from the circle, where r jumps
    rows = np.abs(g.sigma[1:-1]) > 2 * g.ds
    res = np.max(np.abs(dbar - rhs)[rows])
    assert res <= 1e-2 * np.max(np.abs(ws.r_z))


def test_jump_matches_omega_route(solver):
    z = 0.2 + 0.1j
    ws = solver.solve(z)
    full = solver.full_workspace(z)
    assert np.max(np.abs(full.K - ws.K)) <= 1e-2 * np.max(np.abs(ws.K))
    assert np.max(np.abs(full.mu - ws.mu)) <= 1e-2 * np.max(np.abs(ws.mu - 1))
    assert np.allclose(full.Omega1, full.X1 + 1j * full.X2)


def test_mu_minus1_and_derivative(solver):
    z = 0.25 + 0.15j
    ws = solver.solve(z, derivatives=True)
    assert mu_minus1_at(z, ws, solver) == solver.mu_minus1(ws)
    with pytest.raises(ConfigError):
        mu_minus1_at(z + 0.1, ws, solver)
    h = 1e-4
    m = {d: solver.mu_minus1(solver.solve(z + d)) for d in (h, -h, 1j * h, -1j * h)}
    fd = 0.5 * ((m[h] - m[-h]) / (2 * h) - 1j * (m[1j * h] - m[-1j * h]) / (2 * h))
    parts = dz_mu_minus1_abc(z, ws, solver)
    assert parts["total"] == pytest.approx(fd, rel=1e-4)
    assert parts["A"] + parts["BC"] == pytest.approx(parts["total"])
