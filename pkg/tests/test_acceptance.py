"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The long experiments are marked ``slow``; they still run by default.
"""
import io
import os
import time

import numpy as np
import pytest
from scipy import special

from dbarlab import fileio
from dbarlab.dtn_map import assemble_dtn, bessel_dtn_eigenvalue, boundary_nodes, mode_numbers
from dbarlab.forward_faddeev import lambda_to_k, phi_plus, solve_zeta
from dbarlab.grids_norms import SpatialGrid, SpectralGrid, build_potential
from dbarlab.rh_solver import (LogPolarGrid, RHSolver, cauchy_boundary, cauchy_solid,
                               cauchy_solid_anchored, reconstruct_v, work_grid_for)
from dbarlab.scattering_transform import (MomentQuadrature, b_traces, compute_b, compute_f,
                                          compute_scattering, decay_slope, diff_b_from_dtn,
                                          diff_f_from_dtn, h12_from_hpm, hpm_from_f, side_mask,
                                          solve_rho, torus_decay_profile, torus_kernel)
from dbarlab.stability_harness import cli_main, fit_log_bound, sweep_delta, sweep_energy

from conftest import slope
from test_dtn_map import radial_dtn
from test_forward_faddeev import dense_operator

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")


@pytest.fixture
def verdict(capsys):
    def say(num, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {num:>2}] {'PASS' if ok else 'FAIL'}  {detail}")
        return ok
    return say


@pytest.fixture(scope="module")
def grid():
    return SpatialGrid(64)


@pytest.fixture(scope="module")
def bump(grid):
    return build_potential("bump", (1.0, 0.5), grid, m=3)


@pytest.fixture(scope="module")
def scat100(bump):
    t0 = time.time()
    scat = compute_scattering(bump, 100.0, SpectralGrid(), 256)
    scat.diagnostics["wall_time"] = time.time() - t0
    return scat


@pytest.fixture(scope="module")
def rec100(scat100, grid, bump):
    t0 = time.time()
    res = reconstruct_v(scat100, grid, "abc_formula", truth=bump,
                        solver=RHSolver(scat100, work_grid_for(scat100)))
    res.diagnostics["wall_time"] = time.time() - t0
    return res


def test_1_free_pipeline(grid, verdict):
    t0 = time.time()
    zero = build_potential("zero", (), grid)
    scat = compute_scattering(zero, 100.0, SpectralGrid(), 256)
    res = reconstruct_v(scat, grid, "spectral_dz")
    dt = time.time() - t0
    err = float(np.max(np.abs(res.v_rec)))
    ok = err <= 1e-6 and dt <= 60
    assert verdict(1, ok, f"free pipeline: sup|v_rec| = {err:.1e} (<= 1e-6), {dt:.1f} s (<= 60 s)")


@pytest.mark.slow
def test_2_roundtrip(scat100, rec100, verdict):
    rel = rec100.error_vs_truth / 1.0
    dt = scat100.diagnostics["wall_time"] + rec100.diagnostics["wall_time"]
    ok = rel <= 0.1 and dt <= 1800
    assert verdict(2, ok, f"bump round trip at E = 100: relative sup error {rel:.2e} (<= 0.1), "
                          f"{dt:.0f} s single process (<= 1800 s)")


@pytest.mark.slow
def test_3_increasing_stability(verdict):
    cfg = fileio.load_config(os.path.join(FIXTURES, "bump_pair.cfg"))
    g = cfg.spatial
    v1 = build_potential(cfg.potential_kind, cfg.potential_params, g, m=cfg.potential_m)
    v2 = build_potential(cfg.potential2_kind, cfg.potential2_params, g, m=cfg.potential_m)
    rep = sweep_energy(v1, v2, cfg.experiment_E_list, tau=cfg.experiment_tau, m=cfg.potential_m,
                       sgrid=cfg.spectral)
    errs = ", ".join(f"E={r.E:g}: {r.sup_error:.2e} (delta {r.delta:.2e})" for r in rep.records)
    ok = rep.monotonicity_flags["increasing_stability"]
    assert verdict(3, ok, f"shipped pair, error strictly decreasing with delta within 2x: {errs}")


def _envelope(x, y, nbins):
    """Largest value in each of ``nbins`` log-spaced bins (the oscillation peaks)."""
    edges = np.exp(np.linspace(np.log(x.min()), np.log(x.max()) * (1 + 1e-12), nbins + 1))
    X, Y = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        s = (x >= a) & (x < b)
        if np.any(s):
            j = np.flatnonzero(s)[np.argmax(y[s])]
            X.append(x[j])
            Y.append(y[j])
    return np.array(X), np.array(Y)


@pytest.mark.slow
def test_4_decay_battery(grid, verdict):
    # power bump (1 - rho^2)^1.5: Fourier envelope |p|^-3, smoothness tag m = 3
    v = build_potential("bump", (1.0, 0.5), grid, order=1.5)
    m = v.m
    assert m == 3
    target = -m / 2
    slopes = {}
    quad = MomentQuadrature(v)
    E = 100.0
    t = np.exp(np.linspace(np.log(1.2), np.log(8.0), 60))
    b = np.array([abs(compute_b(v, s * np.exp(0.3j), E, quad=quad)) for s in t])
    w_b = 1 + E * (t + 1 / t) ** 2
    slopes["b"] = decay_slope(*_envelope(w_b, b, 6))
    E = 400.0
    f = torus_kernel(v, E, 128, "f")
    hp, hm = hpm_from_f(f, "plus"), hpm_from_f(f, "minus")
    rho = solve_rho(*h12_from_hpm(hp, hm), check=False)
    for name, K in (("f", f), ("h_plus", hp), ("h_minus", hm), ("rho", rho)):
        w, amp = torus_decay_profile(K.values, E)
        keep = w >= 40  # past the first lobe of the bump transform
        slopes[name] = decay_slope(*_envelope(w[keep], amp[keep], 5))
    ok = all(abs(s - target) <= 0.5 for s in slopes.values())
    txt = ", ".join(f"{k} {s:+.2f}" for k, s in slopes.items())
    assert verdict(4, ok, f"decay slopes vs target {target:+.2f} +- 0.5: {txt}")


def _trace(sol, lam, E, nodes):
    k = np.sqrt(E) * np.array([lam.real, lam.imag])
    return sol.mu_at(nodes) * np.exp(1j * (nodes @ k))


@pytest.mark.slow
def test_5_identity_oracles(grid, bump, verdict):
    E = 50.0
    v2 = build_potential("bump", (1.0, 0.5, 0.05, 0.0), grid)
    P1, P2 = assemble_dtn(bump, E, 64), assemble_dtn(v2, E, 64)
    nodes = boundary_nodes(64)
    worst_b = 0.0
    for lam in (1.3 * np.exp(0.4j), 0.6 * np.exp(-1j), 1.6 * np.exp(2.5j)):
        direct = compute_b(v2, lam, E) - compute_b(bump, lam, E)
        _, conj1 = b_traces(bump, lam, E, 64)
        psi2, _ = b_traces(v2, lam, E, 64)
        via = diff_b_from_dtn(P1, P2, conj1, psi2)
        worst_b = max(worst_b, abs(via - direct) / abs(direct))
    worst_f = 0.0
    for th, thp in ((0.3, 1.7), (0.3, 2.9), (1.0, -2.0)):
        lam, lp = np.exp(1j * th), np.exp(1j * thp)
        direct = compute_f(v2, lam, lp, E) - compute_f(bump, lam, lp, E)
        via = diff_f_from_dtn(P1, P2, _trace(phi_plus(bump, -lp, E), -lp, E, nodes),
                              _trace(phi_plus(v2, lam, E), lam, E, nodes))
        worst_f = max(worst_f, abs(via - direct) / abs(direct))
    # h+- from their own torus solves satisfy h - i pi (h 1_side) f w = f
    N = 64
    f = torus_kernel(bump, E, N, "f").values
    worst_h = 0.0
    for side in ("plus", "minus"):
        h = torus_kernel(bump, E, N, f"h_{side}").values
        res = h - 1j * np.pi * (2 * np.pi / N) * (h * side_mask(N, side)) @ f - f
        worst_h = max(worst_h, np.max(np.abs(res)) / np.max(np.abs(f)))
    ok = worst_b <= 1e-2 and worst_f <= 1e-2 and worst_h <= 1e-3
    assert verdict(5, ok, f"E = 50: b difference {worst_b:.1e}, f difference {worst_f:.1e} "
                          f"(<= 1e-2); h+- equation residual {worst_h:.1e} (<= 1e-3)")


@pytest.mark.slow
def test_6_rh_consistency(scat100, rec100, grid, verdict):
    z = 0.3 - 0.2j
    # dbar residual: spectral derivative in theta, fourth-order differences in s
    S = RHSolver(scat100, LogPolarGrid(np.log(8.0), 256, 256))
    ws = S.solve(z)
    g, mu = S.wg, ws.mu
    kth = np.fft.fftfreq(g.n_theta, 1.0 / g.n_theta)
    dth = np.fft.ifft(1j * kth * np.fft.fft(mu, axis=1), axis=1)
    ds = np.zeros_like(mu)
    ds[2:-2] = (-mu[4:] + 8 * mu[3:-1] - 8 * mu[1:-3] + mu[:-4]) / (12 * g.ds)
    res = np.abs((ds + 1j * dth) / (2 * np.conj(g.lam)) - ws.r_z * np.conj(mu))
    # r jumps across the circle; keep rows whose stencil stays on one side
    rows = np.abs(g.sigma) > 3 * g.ds
    rows[:2] = rows[-2:] = False
    dbar_res = np.max(res[rows]) / np.max(np.abs(ws.r_z))
    # Plemelj: C_+ K - C_- K = K on the circle
    K = ws.K
    jump = cauchy_boundary(K, "plus", S.circle) - cauchy_boundary(K, "minus", S.circle)
    plemelj = np.max(np.abs(jump - K)) / np.max(np.abs(K))
    # K against the one-sided limits of mu, extrapolated from the rows next to the circle
    i = int(np.searchsorted(g.sigma, 0.0))
    s = g.sigma
    mu_in = mu[i - 1] + (mu[i - 1] - mu[i - 2]) * (0 - s[i - 1]) / (s[i - 1] - s[i - 2])
    mu_out = mu[i] + (mu[i + 1] - mu[i]) * (0 - s[i]) / (s[i + 1] - s[i])
    Kg = np.fft.ifft(_resample(np.fft.fft(K), g.n_theta)) * g.n_theta / len(K)
    jump_res = np.max(np.abs((mu_in - mu_out) - Kg)) / np.max(np.abs(Kg))
    # two routes for d/dz mu_{-1}
    spec = reconstruct_v(scat100, grid, "spectral_dz", solver=RHSolver(scat100, work_grid_for(scat100)))
    D = grid.disc_mask
    route = np.max(np.abs(spec.v_rec - rec100.v_rec)[D]) / np.max(np.abs(rec100.v_rec[D]))
    ok = dbar_res <= 1e-2 and plemelj <= 1e-3 and jump_res <= 1e-2 and route <= 2e-2
    assert verdict(6, ok, f"dbar residual {dbar_res:.1e} sup|r| (<= 1e-2), Plemelj {plemelj:.1e} "
                          f"(<= 1e-3), K vs mu+ - mu- {jump_res:.1e} (<= 1e-2), "
                          f"route agreement {route:.1e} (<= 2e-2)")


def _resample(F, n):
    """Fourier coefficients F (numpy order) truncated or padded to length n."""
    N = len(F)
    freqs = np.fft.fftfreq(N, 1.0 / N).round().astype(int)
    out = np.zeros(n, complex)
    keep = np.abs(freqs) < n // 2
    out[freqs[keep] % n] = F[keep]
    return out


def test_7_closed_form_kernels(verdict):
    G = LogPolarGrid(np.log(4.0), 64, 32)
    inside = (G.radii[:, None] < 1.0) * np.ones(G.shape)
    lam = G.lam
    exact = np.where(np.abs(lam) < 1, np.conj(lam), 1 / lam)
    disc = float(np.max(np.abs(cauchy_solid(inside, G) - exact)))
    f = np.exp(-np.abs(lam) ** 2) * (1 + lam.real)
    zeta = np.exp(0.7j)
    anchor = abs(cauchy_solid_anchored(f, zeta, G, np.array([zeta]))[0])
    p = 4.0
    # |dbar^-1 f| <= c |lambda|^(2/p - 1) outside the support of f
    t = np.linspace(1.5, 4.0, 12)
    far = slope(t, np.abs(cauchy_solid(inside * (2 + np.cos(G.angles)), G, t * np.exp(0.3j))))
    # the anchored transform is Hoelder of order 1 - 2/p at its anchor
    a = 0.6 + 0.1j
    d = np.logspace(-3, -1, 8)
    g = np.exp(-np.abs(lam) ** 2)
    near = slope(d, np.abs(cauchy_solid_anchored(g, a, G, a + d * np.exp(0.4j))))
    ok = disc <= 1e-3 and anchor <= 1e-10 and far <= 0.75 * (2 / p - 1) and near >= 0.75 * (1 - 2 / p)
    assert verdict(7, ok, f"disc indicator {disc:.1e} (<= 1e-3), anchor {anchor:.1e} (<= 1e-10), "
                          f"outer slope {far:.2f} (<= {0.75 * (2 / p - 1):.3f}), "
                          f"anchored slope {near:.2f} (>= {0.75 * (1 - 2 / p):.3f})")


@pytest.mark.slow
def test_8_envelope_fit(bump, verdict):
    deltas = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1]
    rep = sweep_delta(bump, 400.0, deltas, tau=1.0, m=3)
    errs = ", ".join(f"{r.sup_error:.2e}" for r in rep.records)
    fit_ok = rep.fit_residual <= 2
    verdict("8a", fit_ok, f"E = 400, tau = 1: fit residual {rep.fit_residual:.2f} (<= 2); "
                          f"errors {errs}")
    low = sweep_delta(bump, 25.0, deltas, tau=1.0, m=3)
    _, alpha = fit_log_bound(low.records, 3)
    alpha_ok = 0.5 * (3 - 2) <= alpha <= 2 * 3
    lerrs = ", ".join(f"{r.sup_error:.2e}" for r in low.records)
    verdict("8b", alpha_ok, f"E = 25 log fit: alpha_hat {alpha:.2f} in [0.5, 6]; errors {lerrs}")
    assert fit_ok and alpha_ok


def test_9_dense_oracle_and_bessel(verdict):
    g = SpatialGrid(32)
    v = build_potential("bump", (1.0, 0.5), g)
    k = lambda_to_k(1.6 + 0.3j, 25.0)
    A, supp = dense_operator(v, k, 25.0)
    dense = np.linalg.solve(A, np.ones(A.shape[0], complex))
    it = solve_zeta(v, k, 25.0)
    dense_err = float(np.max(np.abs(it.values[supp] - dense)))
    E = 25.0
    modes = list(mode_numbers(64))
    free = np.diag(assemble_dtn(build_potential("zero", (), g), E).fourier).real
    k0 = np.sqrt(E)
    free_err = max(abs(free[modes.index(n)] - k0 * (special.jv(n - 1, k0) - n / k0 * special.jv(n, k0))
                       / special.jv(n, k0)) / abs(bessel_dtn_eigenvalue(n, E)) for n in (0, 1, 5, -7))
    phi = assemble_dtn(v, E)
    rad_err = max(abs(phi.fourier[modes.index(n), modes.index(n)].real - radial_dtn(n, E))
                  / abs(radial_dtn(n, E)) for n in (0, 1, 3))
    ok = dense_err <= 1e-8 and free_err <= 1e-3 and rad_err <= 1e-3
    assert verdict(9, ok, f"dense vs iterative {dense_err:.1e} (<= 1e-8); DtN modes vs Bessel "
                          f"quotient {free_err:.1e}, vs radial ODE {rad_err:.1e} (<= 1e-3)")


SMALL = ("[grid]\nn = 32\n[spectral]\nn_radii = 16\nn_theta = 16\nn_circle = 32\n"
         "[experiment]\nE_list = {E}\ndelta_list = 1e-3, 1e-2\n[dtn]\nN_b = 64\n")


def _outputs(d):
    return {p: (d / p).read_bytes() for p in sorted(os.listdir(d))}


@pytest.mark.slow
def test_10_determinism(tmp_path, verdict):
    small = tmp_path / "small.cfg"
    small.write_text(SMALL.format(E="25"))
    pair = tmp_path / "pair.cfg"
    pair.write_text(SMALL.format(E="25, 36") + "[potential2]\nparams = 1.0, 0.5, 0.05, 0.0\n")
    scat = os.path.join(FIXTURES, "zero_scat.bin")
    zero_cfg = os.path.join(FIXTURES, "zero.cfg")
    runs = {
        "forward": ["forward", "--config", str(small), "--lam", "1.5+0.5j"],
        "dtn": ["dtn", "--config", str(small)],
        "scatter": ["scatter", "--config", str(small)],
        "reconstruct": ["reconstruct", "--scat", scat, "--grid", "32", "--config", zero_cfg],
        "sweep-delta": ["sweep-delta", "--config", str(small)],
        "sweep-energy": ["sweep-energy", "--config", str(pair)],
    }
    same = {}
    for name, argv in runs.items():
        outs = []
        for k in range(2):
            d = tmp_path / f"{name}{k}"
            assert cli_main(argv + ["--out", str(d / "x")]) == 0, name
            outs.append(_outputs(d))
        same[name] = outs[0] == outs[1] and len(outs[0]) >= 2
    from dbarlab.stability_harness import selftest
    texts = []
    for _ in range(2):
        buf = io.StringIO()
        selftest(buf)
        texts.append(buf.getvalue())
    same["selftest"] = texts[0] == texts[1]
    ok = all(same.values())
    bad = [k for k, v in same.items() if not v]
    assert verdict(10, ok, f"{len(same)} CLI subcommands byte-reproducible"
                           + (f"; differing: {', '.join(bad)}" if bad else ""))
