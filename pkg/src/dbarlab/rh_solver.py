"""Non-local Riemann-Hilbert / dbar problem in the spectral variable and the
reconstruction of the potential from its large-lambda asymptotics.

For each spatial point z the unknown is mu(z, .) with

    dmu/dlambda-bar = r(z, lambda) conj(mu)       off the unit circle,
    mu_+ - mu_- = int rho(lambda, lambda', z) mu_-(lambda') |dlambda'|   on it,
    mu -> 1 at infinity.

Writing K = mu_+ - mu_- and C[K] for its Cauchy integral gives the joint
real-linear system

    mu - T[conj mu] - C[K] = 1,      K - rho_z (1 + C_-[K] + T[conj mu]|_T) = 0,

with T[u] = dbar^{-1}(r_z u).  It is solved by GMRES on the realified
unknowns.  The e / X1 / X2 / Omega decomposition is also available: by
real-linearity mu = e + X_{C[K]}, where X_F solves u - T[conj u] = F, and the
Omega kernels are X_F for F = 1/(zeta - lambda) and i/(zeta - lambda).

The solid Cauchy transform works on a log-polar grid: angular FFT, then exact
product integration in s = log|lambda| of the radial ODE for each mode with
the density linear between nodes and split at the unit circle, where r jumps.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, SolverError
from .grids_norms import (D_RADIUS, EnergyContext, SpatialGrid, SpectralGrid,
                          sup_norm_D)
from .linalg import gmres
from .scattering_transform import ScatteringData, r_phase, rho_phase

TOL = 1e-9
MAXITER = 300
TAIL_TOL = 1e-6

__all__ = [
    "LogPolarGrid", "PolarCauchy", "RHSolver", "RHWorkspace", "ReconstructionResult",
    "cauchy_solid", "cauchy_solid_anchored", "cauchy_boundary", "build_r_z", "solve_e",
    "solve_X", "solve_K", "mu_minus1_at", "dz_mu_minus1_abc", "assemble_mu", "reconstruct_v",
]


# ------------------------------------------------------------------ grids

@dataclass(frozen=True)
class LogPolarGrid:
    """Radii exp(s_i) symmetric about 1 (never on the circle), equispaced angles."""

    sigma_max: float
    n_radii: int
    n_theta: int

    def __post_init__(self):
        if self.n_radii < 6 or self.n_radii % 2:
            raise ConfigError("log-polar grid needs an even number (>= 6) of radii")
        if self.n_theta < 4 or self.n_theta % 2:
            raise ConfigError("log-polar grid needs an even number (>= 4) of angles")

    @classmethod
    def from_spectral(cls, sgrid: SpectralGrid) -> "LogPolarGrid":
        return cls(float(np.log(sgrid.lambda_max)), sgrid.n_radii, sgrid.n_theta)

    @property
    def ds(self) -> float:
        return 2.0 * self.sigma_max / (self.n_radii - 1)

    @property
    def sigma(self) -> np.ndarray:
        return (np.arange(self.n_radii) - 0.5 * (self.n_radii - 1)) * self.ds

    @property
    def radii(self) -> np.ndarray:
        return np.exp(self.sigma)

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def lam(self) -> np.ndarray:
        return self.radii[:, None] * np.exp(1j * self.angles)[None, :]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_radii, self.n_theta)

    def area_weights(self) -> np.ndarray:
        """Trapezoid-in-s area weights (s^2 ds dtheta), for diagnostics only."""
        return np.broadcast_to((self.radii ** 2 * self.ds * 2 * np.pi / self.n_theta)[:, None],
                               self.shape)


def _cell_weights(q: np.ndarray, h: float):
    """int_{-h}^0 e^{beta x} (-x/h, 1 + x/h) dx with q = beta h."""
    q = np.asarray(q, float)
    small = np.abs(q) < 1e-3
    qs = np.where(small, 1.0, q)
    em = np.exp(-qs)
    wa = np.where(small, 0.5 - q / 3 + q * q / 8, (1 - em * (1 + qs)) / qs ** 2)
    wb = np.where(small, 0.5 - q / 6 + q * q / 24, (qs - 1 + em) / qs ** 2)
    return h * wa, h * wb


def _linrec(a: np.ndarray, y0: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Rows y_0 = y0, y_k = a y_{k-1} + G_{k-1} (|a| <= 1 per column), vectorized
    by scaled cumulative sums over blocks short enough to avoid overflow."""
    m = G.shape[0]
    out = np.empty((m + 1, len(y0)), complex)
    out[0] = y0
    if m == 0:
        return out
    la = np.log(np.maximum(np.abs(a), 1e-300))
    B = max(1, int(300.0 / max(float(np.max(-la)), 1e-12)))
    start = 0
    y = y0
    while start < m:
        stop = min(m, start + B)
        k = np.arange(1, stop - start + 1)[:, None]
        pw = a[None, :] ** k
        S = np.cumsum(G[start:stop] / pw, axis=0)
        block = pw * (y[None, :] + S)
        out[start + 1:stop + 1] = block
        y = block[-1]
        start = stop
    return out


class PolarCauchy:
    """Discrete ``dbar^{-1} f = -(1/pi) int f(eta)/(eta - lambda) dA`` on a LogPolarGrid.

    For the angular mode f_{n+1}(s) the mode u_n solves u' - (n/t) u = 2 f_{n+1};
    the decaying solution is integrated from 0 (n < 0) or from infinity (n >= 0).
    Below the innermost radius each mode is continued as (s/s_0)^{|m|}; beyond
    the outermost radius the density is zero.
    """

    def __init__(self, grid: LogPolarGrid):
        self.grid = grid
        nt = grid.n_theta
        self.m = np.fft.fftfreq(nt, 1.0 / nt).round().astype(int)
        self.n = self.m - 1
        n = self.n.astype(float)
        beta = 1.0 - n
        h = grid.ds
        self.up_full = _cell_weights(beta * h, h)
        self.up_half = _cell_weights(beta * h / 2, h / 2)
        self.dn_full = _cell_weights(-beta * h, h)
        self.dn_half = _cell_weights(-beta * h / 2, h / 2)
        self.a_up = np.exp(n * h)
        self.a_up_half = np.exp(n * h / 2)
        self.a_dn = np.exp(-n * h)
        self.a_dn_half = np.exp(-n * h / 2)
        self.neg = self.n < 0
        self.start = np.where(self.neg, 1.0 / np.where(self.neg, -2.0 * n, 1.0), 0.0)
        self.phase = np.exp(-1j * grid.angles)

    # modes ---------------------------------------------------------------
    def _raw(self, f: np.ndarray):
        """Angular coefficients F, the upward integrals U (modes n < 0, anchored at
        each node), the downward integrals V (n >= 0), their values at the circle
        and the one-sided circle data."""
        g = self.grid
        nr = g.n_radii
        L = nr // 2 - 1
        R = L + 1
        F = np.fft.fft(f, axis=1) / g.n_theta
        e = np.exp(g.sigma)[:, None]
        f_in = F[L] + 0.5 * (F[L] - F[L - 1])
        f_out = F[R] - 0.5 * (F[R + 1] - F[R])
        neg, pos = self.neg, ~self.neg
        U = np.zeros_like(F)
        V = np.zeros_like(F)
        Fn = F[:, neg]
        wa, wb = self.up_full[0][neg], self.up_full[1][neg]
        a = self.a_up[neg]
        G = e * np.vstack([np.zeros((1, Fn.shape[1])), wa * Fn[:-1] + wb * Fn[1:]])
        U0 = self.start[neg] * e[0] * Fn[0]
        U[:L + 1, neg] = _linrec(a, U0, G[1:L + 1])
        ha, hb = self.up_half[0][neg], self.up_half[1][neg]
        ah = self.a_up_half[neg]
        Uc = np.zeros(g.n_theta, complex)
        Uc[neg] = ah * U[L, neg] + (ha * Fn[L] + hb * f_in[neg])
        UR = ah * Uc[neg] + e[R] * (ha * f_out[neg] + hb * Fn[R])
        U[R:, neg] = _linrec(a, UR, G[R + 1:])
        Fp = F[:, pos]
        da, db = self.dn_full[0][pos], self.dn_full[1][pos]
        a = self.a_dn[pos]
        H = e[:-1] * (db * Fp[:-1] + da * Fp[1:])  # cell [i, i+1] anchored at i
        V[R:, pos] = _linrec(a, np.zeros(Fp.shape[1], complex), H[R:][::-1])[::-1]
        ha, hb = self.dn_half[0][pos], self.dn_half[1][pos]
        ah = self.a_dn_half[pos]
        Vc = np.zeros(g.n_theta, complex)
        Vc[pos] = ah * V[R, pos] + (hb * f_out[pos] + ha * Fp[R])
        VL = ah * Vc[pos] + e[L] * (hb * Fp[L] + ha * f_in[pos])
        V[:L + 1, pos] = _linrec(a, VL, H[:L][::-1])[::-1]
        return F, U, V, Uc, Vc, f_in, f_out

    def modes(self, f: np.ndarray):
        """Radial profiles u_n(t_i) (shape (nr, nt), columns in fftfreq order of
        m = n + 1) and the circle values u_n(1)."""
        _, U, V, Uc, Vc, _, _ = self._raw(f)
        return np.where(self.neg, 2.0 * U, -2.0 * V), np.where(self.neg, 2.0 * Uc, -2.0 * Vc)

    def apply(self, f: np.ndarray, circle: int | None = None):
        """dbar^{-1} f at the grid nodes; with ``circle=N`` also the values on N
        equispaced points of the unit circle."""
        u, u_c = self.modes(f)
        vals = self.phase[None, :] * np.fft.ifft(u, axis=1) * self.grid.n_theta
        if circle is None:
            return vals
        return vals, self.circle_values(u_c, circle)

    def circle_values(self, u_c: np.ndarray, N: int) -> np.ndarray:
        """Evaluate sum_n u_n e^{i n phi} at N circle nodes."""
        coef = np.zeros(N, complex)
        np.add.at(coef, self.n % N, u_c)
        return np.fft.ifft(coef) * N

    def mass(self, f: np.ndarray) -> complex:
        """(1/pi) int f dA, the coefficient of 1/lambda at infinity."""
        _, U, _, _, _, _, _ = self._raw(f)
        # u_{-1} lives in the m = 0 column
        return complex(2.0 * self.grid.radii[-1] * U[-1, 0])

    def at_points(self, f: np.ndarray, pts) -> np.ndarray:
        """dbar^{-1} f at arbitrary points (partial-cell integration)."""
        pts = np.asarray(pts, complex)
        F, U, V, Uc, Vc, f_in, f_out = self._raw(f)
        sig = self.grid.sigma
        L = self.grid.n_radii // 2 - 1
        n = self.n.astype(float)
        beta = 1.0 - n
        out = np.empty(pts.shape, complex)
        for k, p in enumerate(pts.ravel()):
            t = abs(p)
            t = max(t, 1e-300)
            tau = np.log(t)
            if tau <= sig[0]:
                s0 = np.exp(sig[0])
                x = t / s0
                up = self.start * t * F[0] * x ** np.abs(self.m)
                # n >= 0: s^{-n} F0 (s/s0)^{n+1} = F0 s / s0^{n+1}, integrated from t to s0
                dn = x ** np.maximum(self.n, 0) * (V[0] + F[0] * (s0 * s0 - t * t) / (2 * s0))
            elif tau >= sig[-1]:
                up = U[-1] * np.exp(n * (tau - sig[-1]))
                dn = np.zeros_like(up)
            else:
                i = int(np.searchsorted(sig, tau) - 1)
                lo, hi, fl, fh, Ul, Vh = sig[i], sig[i + 1], F[i], F[i + 1], U[i], V[i + 1]
                if i == L:
                    if tau < 0:
                        hi, fh, Vh = 0.0, f_in, Vc
                    else:
                        lo, fl, Ul = 0.0, f_out, Uc
                ftau = fl + (fh - fl) * (tau - lo) / (hi - lo)
                hp, hm = tau - lo, hi - tau
                wa, wb = _cell_weights(beta * hp, hp)
                up = np.exp(n * hp) * Ul + t * (wa * fl + wb * ftau)
                wa, wb = _cell_weights(-beta * hm, hm)
                dn = np.exp(-n * hm) * Vh + t * (wb * ftau + wa * fh)
            coef = np.where(self.neg, 2.0 * up, -2.0 * dn)
            out.flat[k] = np.sum(coef * np.exp(1j * self.n * np.angle(p)))
        return out


# ------------------------------------------------------------ standalone kernels

def _polar_for(f: np.ndarray, grid) -> PolarCauchy:
    if isinstance(grid, PolarCauchy):
        return grid
    if isinstance(grid, SpectralGrid):
        grid = LogPolarGrid.from_spectral(grid)
    if not isinstance(grid, LogPolarGrid):
        raise ConfigError("grid must be a SpectralGrid, LogPolarGrid or PolarCauchy")
    if f.shape != grid.shape:
        raise ConfigError("field shape does not match the grid")
    return PolarCauchy(grid)


def _tail_check(f: np.ndarray, grid: LogPolarGrid):
    a = np.abs(f) ** 2 * grid.radii[:, None] ** 2
    total = float(np.sum(a))
    if total == 0.0:
        return
    rim = float(np.sum(a[-1]) + np.sum(a[0]))
    if rim > TAIL_TOL * total * grid.n_radii:
        raise SolverError(f"density not decayed at the grid rim (rim mass {rim / total:.2e})",
                          stage="cauchy_solid")


def cauchy_solid(f: np.ndarray, grid, pts=None, check_tail: bool = False) -> np.ndarray:
    """``-(1/pi) int f(eta)/(eta - lambda) dA(eta)`` at the grid nodes (or at ``pts``)."""
    f = np.asarray(f, complex)
    C = _polar_for(f, grid)
    if check_tail:
        _tail_check(f, C.grid)
    if pts is None:
        return C.apply(f)
    return C.at_points(f, pts)


def cauchy_solid_anchored(f: np.ndarray, zeta: complex, grid, pts=None) -> np.ndarray:
    """``-(zeta - lambda)/pi int f(eta)/((eta - lambda)(zeta - eta)) dA``.

    By partial fractions this is ``dbar^{-1}f(lambda) - dbar^{-1}f(zeta)``, so it
    vanishes at ``lambda = zeta`` exactly.
    """
    f = np.asarray(f, complex)
    C = _polar_for(f, grid)
    anchor = C.at_points(f, np.array([zeta]))[0]
    vals = C.apply(f) if pts is None else C.at_points(f, pts)
    if pts is not None:
        vals = np.where(np.asarray(pts) == zeta, 0.0, vals - anchor)
        return vals
    return vals - anchor


def cauchy_boundary(u: np.ndarray, side: str, lam, offset_h: float | None = None):
    """``(2 pi i)^-1 oint u(zeta)/(zeta - lambda) dzeta`` over the unit circle.

    ``u`` is sampled at N equispaced circle nodes.  Off the circle the integral
    is evaluated from the Fourier coefficients of u (exact for trigonometric
    polynomials); on it, ``side='plus'`` gives the inner and ``'minus'`` the outer
    boundary value, or the value at radius ``1 -/+ offset_h`` when an offset is given.
    """
    u = np.asarray(u, complex)
    N = len(u)
    c = np.fft.fft(u) / N
    n = np.fft.fftfreq(N, 1.0 / N).round().astype(int)
    lam = np.asarray(lam, complex)
    t = np.abs(lam)
    on = np.isclose(t, 1.0, rtol=0, atol=1e-12)
    if side not in ("plus", "minus"):
        raise ConfigError("side must be 'plus' or 'minus'")
    if offset_h is not None:
        t = np.where(on, 1.0 - offset_h if side == "plus" else 1.0 + offset_h, t)
        on = np.zeros_like(on)
    inside = np.where(on, side == "plus", t < 1)
    lam_eval = np.where(on, lam / np.where(t > 0, t, 1), t * np.exp(1j * np.angle(lam)))
    out = np.zeros(lam.shape, complex)
    for k, nk in enumerate(n):
        if nk >= 0:
            out = out + np.where(inside, c[k] * lam_eval ** nk, 0.0)
        else:
            out = out - np.where(inside, 0.0, c[k] * lam_eval ** nk)
    return out if out.ndim else complex(out)


# ------------------------------------------------------------ workspaces

@dataclass(eq=False)
class RHWorkspace:
    """Solved fields at one spatial point; arrays live on the working grid."""

    z: complex
    r_z: np.ndarray
    mu: np.ndarray
    K: np.ndarray
    e: np.ndarray | None = None
    X1: np.ndarray | None = None
    X2: np.ndarray | None = None
    residuals: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)

    @property
    def Omega1(self):
        return None if self.X1 is None else self.X1 + 1j * self.X2

    @property
    def Omega2(self):
        return None if self.X1 is None else self.X1 - 1j * self.X2


@dataclass(eq=False)
class ReconstructionResult:
    v_rec: np.ndarray
    mu_minus1: np.ndarray
    route: str
    error_vs_truth: float | None = None
    imag_sup: float = 0.0
    diagnostics: dict = field(default_factory=dict)


def _interp_half(sig_data, vals, sig_new):
    """Cubic spline in s on one side of the circle, zero beyond the data range."""
    spl = CubicSpline(sig_data, vals, axis=0, bc_type="natural", extrapolate=True)
    out = spl(sig_new)
    out[(sig_new < sig_data.min() - 1e-12) & (sig_new < 0)] = 0.0
    out[(sig_new > sig_data.max() + 1e-12) & (sig_new > 0)] = 0.0
    return out


def _angular_resample(vals: np.ndarray, nt_new: int) -> np.ndarray:
    nt = vals.shape[1]
    if nt == nt_new:
        return vals
    F = np.fft.fft(vals, axis=1) / nt
    G = np.zeros((vals.shape[0], nt_new), complex)
    k = min(nt, nt_new) // 2
    G[:, :k] = F[:, :k]
    G[:, -k + 1:] = F[:, -k + 1:]
    if nt_new > nt:
        # split the old Nyquist mode symmetrically
        G[:, k] = 0.5 * F[:, k]
        G[:, -k] = 0.5 * F[:, k]
    return np.fft.ifft(G, axis=1) * nt_new


def work_grid_for(scat: ScatteringData, n_radii: int | None = None,
                  n_theta: int | None = None) -> LogPolarGrid:
    """Working grid sized by energy.

    The phase of r(z, lambda) turns over ``sqrt(E) |z| (|lambda| + 1/|lambda|)`` radians per
    turn in angle and grows steeply in radius; below these sizes the round-trip error of
    the bump family is set by angular and radial under-resolution near |z| = 1.
    """
    sg = scat.grid
    sE = scat.E.sqrtE
    nr = n_radii or max(2 * sg.n_radii, 64 * int(np.ceil(sE / 5)))
    nt = n_theta or max(sg.n_theta, 32 * int(np.ceil(sE / 10 + 1)))
    return LogPolarGrid(float(np.log(sg.lambda_max)), nr + nr % 2, nt + nt % 2)


class RHSolver:
    """Per-z solver for the non-local RH problem built from scattering data.

    b is interpolated from the annulus data onto a finer log-polar working grid
    (cubic spline in log-radius on each side of the circle, trigonometric in
    angle) and r is rebuilt there; the z-dependent phases are applied exactly.
    """

    def __init__(self, scat: ScatteringData, wgrid: LogPolarGrid | None = None,
                 tol: float = TOL, maxiter: int = MAXITER, cutoff: float | None = None):
        """``cutoff = a`` keeps r only on the annulus 1/a < |lambda| < a."""
        self.scat = scat
        self.cutoff = cutoff
        self.E: EnergyContext = scat.E
        self.sqrtE = self.E.sqrtE
        self.wg = wgrid or work_grid_for(scat)
        self.C = PolarCauchy(self.wg)
        self.tol = tol
        self.maxiter = maxiter
        self.N_T = scat.N_T
        self.circle = np.exp(2j * np.pi * np.arange(self.N_T) / self.N_T)
        self.w = 2 * np.pi / self.N_T
        self.r0 = self._working_r()
        self.rho0 = np.asarray(scat.rho_values, complex)
        lam = self.wg.lam
        self.lam = lam
        self.t = np.abs(lam)
        self._kcoef = self._cauchy_K_profiles()
        self.free = not (np.any(self.r0) or np.any(self.rho0))

    # data ----------------------------------------------------------------
    def _working_r(self) -> np.ndarray:
        sg = self.scat.grid
        b = self.scat.b_values
        lam_d = sg.lam
        if b is None:
            with np.errstate(divide="ignore", invalid="ignore"):
                b = self.scat.r_values * np.conj(lam_d) / (
                    np.pi * np.sign(np.abs(lam_d) ** 2 - 1))
        b = _angular_resample(np.asarray(b, complex), self.wg.n_theta)
        s_d = sg.log_radii
        s_w = self.wg.sigma
        h = sg.n_radii // 2
        bw = np.zeros(self.wg.shape, complex)
        inner = s_w < 0
        bw[inner] = _interp_half(s_d[:h], b[:h], s_w[inner])
        bw[~inner] = _interp_half(s_d[h:], b[h:], s_w[~inner])
        lam = self.wg.lam
        if self.cutoff is not None:
            t = np.abs(lam)
            bw[(t >= self.cutoff) | (t <= 1 / self.cutoff)] = 0.0
        return np.pi / np.conj(lam) * np.sign(np.abs(lam) ** 2 - 1) * bw

    def r_z(self, z: complex) -> np.ndarray:
        return self.r0 * r_phase(z, self.wg.lam, self.E)

    def rho_z(self, z: complex) -> np.ndarray:
        c = self.circle
        return self.rho0 * rho_phase(z, c[:, None], c[None, :], self.E)

    def _phase_grad(self, d: int) -> np.ndarray:
        lam = self.wg.lam
        part = lam.real if d == 0 else lam.imag
        return -1j * self.sqrtE * (1 + 1 / np.abs(lam) ** 2) * part

    def _rho_phase_grad(self, d: int) -> np.ndarray:
        c = self.circle
        a = c[None, :] - c[:, None]
        b = 1 / c[None, :] - 1 / c[:, None]
        if d == 0:
            return 0.5j * self.sqrtE * (a + b)
        return 0.5j * self.sqrtE * (-1j * a + 1j * b)

    # Cauchy integral of circle data on the working grid --------------------
    def _cauchy_K_profiles(self):
        nt = self.wg.n_theta
        N = self.N_T
        n = np.fft.fftfreq(N, 1.0 / N).round().astype(int)
        keep = np.abs(n) < nt // 2
        t = self.wg.radii
        prof = np.zeros((len(t), N))
        inside = t < 1
        for k in np.nonzero(keep)[0]:
            nk = n[k]
            if nk >= 0:
                prof[inside, k] = t[inside] ** nk
            else:
                prof[~inside, k] = -t[~inside] ** nk
        cols = n % nt
        return prof, keep, cols

    def cauchy_K(self, K: np.ndarray) -> np.ndarray:
        prof, keep, cols = self._kcoef
        c = np.fft.fft(K) / self.N_T
        G = np.zeros(self.wg.shape, complex)
        G[:, cols[keep]] = prof[:, keep] * c[keep][None, :]
        return np.fft.ifft(G, axis=1) * self.wg.n_theta

    def cauchy_K_minus(self, K: np.ndarray) -> np.ndarray:
        """Outer boundary value C_-[K] on the circle nodes."""
        N = self.N_T
        c = np.fft.fft(K) / N
        n = np.fft.fftfreq(N, 1.0 / N)
        c = np.where(n < 0, -c, 0.0)
        return np.fft.ifft(c) * N

    # operators -------------------------------------------------------------
    def _T(self, rz, u):
        return self.C.apply(rz * np.conj(u), circle=self.N_T)

    def _pack(self, mu, K):
        return np.concatenate([mu.real.ravel(), mu.imag.ravel(), K.real, K.imag])

    def _unpack(self, x):
        n = self.wg.n_radii * self.wg.n_theta
        mu = (x[:n] + 1j * x[n:2 * n]).reshape(self.wg.shape)
        K = x[2 * n:2 * n + self.N_T] + 1j * x[2 * n + self.N_T:]
        return mu, K

    def _joint(self, rz, rhoz):
        w = self.w

        def apply(x):
            mu, K = self._unpack(x)
            Tv, Tc = self._T(rz, mu)
            r1 = mu - Tv - self.cauchy_K(K)
            r2 = K - (rhoz @ (self.cauchy_K_minus(K) + Tc)) * w
            return self._pack(r1, r2)
        return apply

    def _solve_joint(self, rz, rhoz, rhs_mu, rhs_K, x0=None, stage="joint"):
        apply = self._joint(rz, rhoz)
        b = self._pack(rhs_mu, rhs_K)
        x, info = gmres(apply, b, x0=x0, tol=self.tol, restart=40, maxiter=self.maxiter)
        if not info.converged:
            raise SolverError(f"{stage} system did not converge (residual "
                              f"{info.rel_residual:.2e}, condition {info.condition_estimate:.2e})",
                              stage=stage, residual=info.rel_residual)
        mu, K = self._unpack(x)
        return mu, K, info, x

    # per-z solve -----------------------------------------------------------
    def solve(self, z: complex, x0=None, derivatives: bool = False) -> RHWorkspace:
        z = complex(z)
        rz = self.r_z(z)
        shape = self.wg.shape
        if self.free:
            ws = RHWorkspace(z, rz, np.ones(shape, complex), np.zeros(self.N_T, complex),
                             residuals={"joint": 0.0, "iterations": 0})
            if derivatives:
                zero = (np.zeros(shape, complex), np.zeros(self.N_T, complex))
                ws.grads = {"x": zero, "y": zero}
            return ws
        rhoz = self.rho_z(z)
        ones = np.ones(shape, complex)
        mu, K, info, x = self._solve_joint(rz, rhoz, ones, rhoz.sum(axis=1) * self.w, x0)
        ws = RHWorkspace(z, rz, mu, K, residuals={"joint": info.rel_residual,
                                                  "iterations": info.iterations})
        ws.grads["_x"] = x
        if derivatives:
            self.derivatives(ws, rhoz)
        return ws

    def mu_minus(self, ws: RHWorkspace) -> np.ndarray:
        """mu_- on the circle nodes."""
        _, Tc = self._T(ws.r_z, ws.mu)
        return 1 + self.cauchy_K_minus(ws.K) + Tc

    def derivatives(self, ws: RHWorkspace, rhoz=None):
        """Solve the x- and y-differentiated joint systems (same operator)."""
        rhoz = self.rho_z(ws.z) if rhoz is None else rhoz
        mum = self.mu_minus(ws)
        for d, name in ((0, "x"), (1, "y")):
            drz = ws.r_z * self._phase_grad(d)
            Tv, Tc = self._T(drz, ws.mu)
            drho = rhoz * self._rho_phase_grad(d)
            rhs_K = (drho @ mum + rhoz @ Tc) * self.w
            dmu, dK, info, _ = self._solve_joint(ws.r_z, rhoz, Tv, rhs_K, stage=f"d{name}")
            ws.grads[name] = (dmu, dK)
            ws.residuals[f"d{name}"] = info.rel_residual

    def mu_minus1(self, ws: RHWorkspace) -> complex:
        Km1 = np.sum(ws.K * self.circle) / self.N_T
        return self.C.mass(ws.r_z * np.conj(ws.mu)) - Km1

    def dz_mu_minus1(self, ws: RHWorkspace) -> complex:
        if "x" not in ws.grads:
            self.derivatives(ws)
        out = []
        for d, name in ((0, "x"), (1, "y")):
            dmu, dK = ws.grads[name]
            drz = ws.r_z * self._phase_grad(d)
            dens = drz * np.conj(ws.mu) + ws.r_z * np.conj(dmu)
            out.append(self.C.mass(dens) - np.sum(dK * self.circle) / self.N_T)
        return 0.5 * (out[0] - 1j * out[1])

    # e / X decomposition -----------------------------------------------------
    def solve_plain(self, rz, rhs, stage="e"):
        """Solve u - dbar^{-1}(r_z conj u) = rhs on the working grid."""
        if not np.any(rz):
            return np.array(rhs, complex), 0.0
        n = rz.size
        sh = rz.shape

        def apply(x):
            u = (x[:n] + 1j * x[n:]).reshape(sh)
            r = u - self.C.apply(rz * np.conj(u))
            return np.concatenate([r.real.ravel(), r.imag.ravel()])
        b = np.concatenate([np.real(rhs).ravel(), np.imag(rhs).ravel()])
        x, info = gmres(apply, b, tol=self.tol, restart=40, maxiter=self.maxiter)
        if not info.converged:
            raise SolverError(f"{stage} equation did not converge (residual "
                              f"{info.rel_residual:.2e})", stage=stage, residual=info.rel_residual)
        return (x[:n] + 1j * x[n:]).reshape(sh), info.rel_residual

    def solve_X(self, rz, zeta: complex, which: str = "X1"):
        """X = RHS + Y with RHS = 1/(2(zeta - lambda)) (X1) or 1/(2i(zeta - lambda)) (X2).

        Y solves Y - dbar^{-1}(r conj Y) = dbar^{-1}(r conj RHS) and is smooth
        across the circle.  Returns (X on the working grid, Y on the circle
        nodes, residual).
        """
        c = 0.5 if which == "X1" else 0.5 / 1j
        rhs = c / (zeta - self.lam)
        if not np.any(rz):
            return rhs, np.zeros(self.N_T, complex), 0.0
        src = self.C.apply(rz * np.conj(rhs))
        Y, res = self.solve_plain(rz, src, stage=which)
        Yc = self.C.apply(rz * np.conj(rhs), circle=self.N_T)[1] + self._T(rz, Y)[1]
        return rhs + Y, Yc, res

    def full_workspace(self, z: complex) -> RHWorkspace:
        """Solve e, X1, X2 for every circle node and K by the dense Omega system
        (costs 2 N_T + 1 dbar solves; meant for verification)."""
        z = complex(z)
        rz = self.r_z(z)
        e, res_e = self.solve_plain(rz, np.ones(self.wg.shape, complex))
        N = self.N_T
        X1 = np.empty((N,) + self.wg.shape, complex)
        X2 = np.empty_like(X1)
        Y1c = np.empty((N, N), complex)
        Y2c = np.empty((N, N), complex)
        worst = 0.0
        for j, zeta in enumerate(self.circle):
            X1[j], Y1c[j], r1 = self.solve_X(rz, zeta, "X1")
            X2[j], Y2c[j], r2 = self.solve_X(rz, zeta, "X2")
            worst = max(worst, r1, r2)
        ws = RHWorkspace(z, rz, np.empty(0), np.empty(0), e, X1, X2,
                         {"e": res_e, "X": worst})
        # circle traces: rows are lambda_j, columns zeta_k
        ws.grads["e_circle"] = 1 + self._T(rz, e)[1]
        ws.grads["Y1_circle"] = Y1c.T
        ws.grads["Y2_circle"] = Y2c.T
        ws.K = solve_K(self.rho_z(z), ws, solver=self)
        ws.mu = assemble_mu(ws, solver=self)
        return ws


# ------------------------------------------------------------ standalone operations

def build_r_z(scat: ScatteringData, z: complex) -> np.ndarray:
    """r(z, lambda) at the annulus nodes of the scattering data."""
    return scat.r_values * r_phase(z, scat.grid.lam, scat.E)


def _solver_on_annulus(r_z: np.ndarray, grid) -> RHSolver:
    if isinstance(grid, RHSolver):
        return grid
    sg = grid if isinstance(grid, SpectralGrid) else None
    if sg is None:
        raise ConfigError("grid must be a SpectralGrid or an RHSolver")
    scat = ScatteringData.zero(1.0, sg, 4)
    solver = RHSolver(scat, LogPolarGrid.from_spectral(sg))
    return solver


def solve_e(r_z: np.ndarray, grid) -> tuple[np.ndarray, float]:
    """e = 1 - (1/pi) int r_z conj(e)/(zeta - lambda) dA on the grid of ``r_z``."""
    solver = _solver_on_annulus(r_z, grid)
    return solver.solve_plain(np.asarray(r_z, complex), np.ones(r_z.shape, complex))


def solve_X(r_z: np.ndarray, zeta: complex, which: str, grid) -> tuple[np.ndarray, float]:
    if which not in ("X1", "X2"):
        raise ConfigError("which must be 'X1' or 'X2'")
    if not np.isclose(abs(zeta), 1.0):
        raise ConfigError("zeta must lie on the unit circle")
    solver = _solver_on_annulus(r_z, grid)
    X, _, res = solver.solve_X(np.asarray(r_z, complex), complex(zeta), which)
    return X, res


def solve_K(rho_z: np.ndarray, ws: RHWorkspace, solver: RHSolver) -> np.ndarray:
    """Dense realified solve of
    K = int rho(., l', z)[e(l') + (2 pi i)^-1 oint Omega1(l'(1+0), zeta) K dzeta
                                 - Omega2(l', zeta) conj(K) dconj(zeta)] |dl'|.

    The pole 1/(zeta - lambda) of Omega1 contributes the outer boundary value
    C_-[K] exactly; the smooth parts Y1 +/- i Y2 are summed by the trapezoid rule.
    """
    N = solver.N_T
    if not np.any(rho_z):
        return np.zeros(N, complex)
    zeta = solver.circle
    w = solver.w
    A1 = ws.grads["Y1_circle"] + 1j * ws.grads["Y2_circle"]
    A2 = ws.grads["Y1_circle"] - 1j * ws.grads["Y2_circle"]
    dz = 1j * zeta * w
    dzc = np.conj(dz)

    def M(K):
        return (solver.cauchy_K_minus(K)
                + (A1 @ (K * dz) - A2 @ (np.conj(K) * dzc)) / (2j * np.pi))

    # real matrix of K -> K - rho w M(K), built column by column
    eye = np.eye(N)
    cols = []
    for basis in (eye, 1j * eye):
        img = np.array([b - rho_z @ M(b) * w for b in basis]).T
        cols.append(np.vstack([img.real, img.imag]))
    A = np.hstack(cols)
    rhs = rho_z @ ws.grads["e_circle"] * w
    sol = np.linalg.solve(A, np.concatenate([rhs.real, rhs.imag]))
    ws.residuals["K_condition"] = float(np.linalg.cond(A))
    return sol[:N] + 1j * sol[N:]


def assemble_mu(ws: RHWorkspace, lam=None, solver: RHSolver | None = None) -> np.ndarray:
    """mu = e + (2 pi i)^-1 oint Omega1(., zeta) K dzeta - Omega2(., zeta) conj(K) dconj(zeta)
    on the working grid (the Omega1 pole part is the exact Cauchy integral of K)."""
    if ws.e is None:
        raise ConfigError("workspace has no e / X fields")
    if lam is not None:
        raise ConfigError("assemble_mu evaluates on the working grid only")
    zeta = solver.circle
    w = solver.w
    dz = 1j * zeta * w
    pole = 1.0 / (zeta[:, None, None] - solver.lam[None])
    Y1 = ws.X1 - 0.5 * pole
    Y2 = ws.X2 - 0.5 / 1j * pole
    a = (ws.K * dz)[:, None, None]
    b = (np.conj(ws.K) * np.conj(dz))[:, None, None]
    smooth = np.sum((Y1 + 1j * Y2) * a - (Y1 - 1j * Y2) * b, axis=0) / (2j * np.pi)
    return ws.e + solver.cauchy_K(ws.K) + smooth


def mu_minus1_at(z: complex, ws: RHWorkspace, solver: RHSolver) -> complex:
    """mu_{-1}(z) = (1/pi) int r conj(mu) dA - (2 pi i)^-1 oint K dzeta."""
    if abs(complex(z) - ws.z) > 1e-12:
        raise ConfigError("workspace was solved at a different z")
    return solver.mu_minus1(ws)


def dz_mu_minus1_abc(z: complex, ws: RHWorkspace, solver: RHSolver) -> dict:
    """d/dz mu_{-1} split into the volumetric e part (A) and the circle part (B + C).

    The total is (1/pi) int [dz r conj(mu) + r conj(dzbar mu)] dA - (2 pi i)^-1 oint dz K dzeta
    with dz r = -(i/2) sqrt(E)(1/lambda + conj(lambda)) r; the z-derivatives of
    mu and K come from the differentiated joint system.  A uses e in place of mu.
    """
    if abs(complex(z) - ws.z) > 1e-12:
        raise ConfigError("workspace was solved at a different z")
    total = solver.dz_mu_minus1(ws)
    e, _ = solver.solve_plain(ws.r_z, np.ones(ws.r_z.shape, complex))
    parts = []
    for d in (0, 1):
        drz = ws.r_z * solver._phase_grad(d)
        Tv = solver.C.apply(drz * np.conj(e))
        de, _ = solver.solve_plain(ws.r_z, Tv, stage="de")
        parts.append(solver.C.mass(drz * np.conj(e) + ws.r_z * np.conj(de)))
    A = 0.5 * (parts[0] - 1j * parts[1])
    return {"A": A, "BC": total - A, "total": total}


def _z_nodes(grid: SpatialGrid, radius: float) -> np.ndarray:
    z = grid.z
    idx = np.argwhere(np.abs(z) < radius)
    return idx


def reconstruct_v(scat: ScatteringData, grid: SpatialGrid, route: str = "spectral_dz",
                  truth=None, solver: RHSolver | None = None, window=(1.0, 1.45),
                  progress=None) -> ReconstructionResult:
    """v = 2i sqrt(E) d/dz mu_{-1} on the spatial grid.

    ``spectral_dz`` solves mu_{-1} on nodes with |z| < window[1], multiplies by a
    smooth window equal to 1 for |z| <= window[0] and differentiates by FFT;
    ``abc_formula`` uses the differentiated joint system at the nodes in D.
    v_rec is reported on D (the known support) and set to 0 outside it.
    """
    from .scattering_transform import _window

    if route not in ("spectral_dz", "abc_formula"):
        raise ConfigError("route must be 'spectral_dz' or 'abc_formula'")
    if window[1] >= grid.L:
        raise ConfigError("the derivative window must fit inside the spatial box")
    t0 = time.time()
    solver = solver or RHSolver(scat)
    z = grid.z
    n = grid.n
    mu1 = np.zeros((n, n), complex)
    dz = np.zeros((n, n), complex)
    radius = window[1] if route == "spectral_dz" else D_RADIUS
    idx = _z_nodes(grid, radius)
    worst = {}
    x0 = None
    for count, (i, j) in enumerate(idx):
        zz = z[i, j]
        try:
            ws = solver.solve(zz, x0=x0, derivatives=(route == "abc_formula"))
        except SolverError as exc:
            raise SolverError(f"{exc} at z = {zz:.4f}", stage=getattr(exc, "stage", None)) from exc
        x0 = ws.grads.get("_x")
        mu1[i, j] = solver.mu_minus1(ws)
        if route == "abc_formula":
            dz[i, j] = solver.dz_mu_minus1(ws)
        for key, val in ws.residuals.items():
            worst[key] = max(worst.get(key, 0.0), float(val))
        if progress is not None:
            progress(count + 1, len(idx))
    if route == "spectral_dz":
        w = _window(np.abs(z), *window)
        F = np.fft.fft2(w * mu1)
        k = 2 * np.pi * np.fft.fftfreq(n, grid.h)
        KX, KY = np.meshgrid(k, k)
        dz = np.fft.ifft2(F * 0.5 * (1j * KX + KY))
    v = 2j * solver.sqrtE * dz
    v = np.where(grid.disc_mask, v, 0.0)
    imag_sup = float(np.max(np.abs(v.imag))) if v.size else 0.0
    err = None
    if truth is not None:
        tv = truth.values if hasattr(truth, "values") else np.asarray(truth)
        err = sup_norm_D(v - tv, grid)
    diag = {f"max_{k}": v_ for k, v_ in worst.items()}
    diag["wall_time"] = time.time() - t0
    diag["n_z"] = len(idx)
    return ReconstructionResult(v, mu1, route, err, imag_sup, diag)
