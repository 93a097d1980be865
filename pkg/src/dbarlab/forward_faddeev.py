"""Faddeev eigenfunctions at positive energy.

For complex momentum ``zeta`` the eigenfunction ``psi = exp(i zeta.x) mu``
solves ``mu = 1 + g(., zeta) * (v mu)`` where

    g(x, zeta) = -(2pi)^-2 int exp(i xi.x) / (xi^2 + 2 zeta.xi) dxi.

Two realizations of the convolution with ``g`` are provided.

``lattice``
    Riemann sum of the Fourier integral over a half-shifted lattice on a
    doubled periodic box.  Cheap, and accurate once ``|Im zeta|`` is large, but
    the singular set of the symbol is nearly a circle close to ``|lambda| = 1``
    where the sum converges poorly.

``split``
    ``G = exp(i zeta.x) g`` is the outgoing-type fundamental solution of
    ``Delta + zeta.zeta`` plus a smooth remainder: shifting the integration
    contour from ``Im xi = 0`` to ``Im xi = Im zeta`` picks up the poles of the
    symbol, which yields a one-dimensional superposition of plane waves
    ``H(x) = (i/4pi) int exp(i (a(t) x1 + t x2)) / a(t) dt`` in the frame whose
    first axis is ``Im zeta``.  The fundamental solution is applied with a
    truncated-kernel FFT (exact for compactly supported densities), the plane
    waves as a low-rank product.  Exact up to quadrature, but suffers
    cancellation of size ``exp(|Im zeta| * diameter)``.

``auto`` picks ``split`` for ``|Im zeta| <= SPLIT_MAX_IMAG`` and ``lattice``
otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import special

from .errors import NoConvergence, SingularDenominator, ZeroLambda
from .grids_norms import (OFFSET_H, ComplexField, EnergyContext, PotentialField, SpatialGrid,
                          SpectralGrid, as_energy)
from .linalg import gmres

SPLIT_MAX_IMAG = 6.5
LATTICE_BOX = 4  # periodic box of the lattice kernel, in units of the grid width
GMRES_TOL = 1e-10
GMRES_RESTART = 30
GMRES_MAXITER = 500
EXCEPTIONAL_COND = 1e8


def lambda_to_k(lam: complex, E) -> np.ndarray:
    """k(lambda) on the isotropic variety k.k = E."""
    lam = complex(lam)
    if lam == 0:
        raise ZeroLambda("lambda must be nonzero")
    s = as_energy(E).sqrtE
    return np.array([(lam + 1 / lam) * s / 2, 1j * (1 / lam - lam) * s / 2])


def _upper_sqrt(w):
    """Square root with nonnegative imaginary part (principal branch on the real axis)."""
    a = np.sqrt(np.asarray(w, complex))
    return np.where(a.imag < 0, -a, a)


# ------------------------------------------------------------------ kernels

@lru_cache(maxsize=8)
def _box_geometry(n: int, L: float, factor: int = 2):
    """Frequencies of the periodic box (``factor`` grid widths) and Bessel tables."""
    N = factor * n
    h = 2 * L / n
    P = N * h
    m = np.fft.fftfreq(N, 1.0 / N)
    xi = 2 * np.pi * m / P
    s = np.hypot(xi[None, :], xi[:, None])
    R0 = truncation_radius(L)
    return xi, s, R0, special.j0(s * R0), special.j1(s * R0)


def truncation_radius(L: float) -> float:
    """Cut-off for the free kernel: reaches every grid point from supp v in D.

    Needs ``R0 >= L*sqrt(2) + 1`` (largest source-target distance) and
    ``R0 <= 4L - (L + 1)`` (nearest periodic image), which holds for L >= 1.3.
    """
    lo, hi = L * np.sqrt(2) + 1.0, 3 * L - 1.0
    return 0.5 * (lo + hi) if hi > lo else lo


def truncated_free_symbol(kappa: complex, s: np.ndarray, R0: float, j0=None, j1=None):
    """Fourier transform of ``-(i/4) H0(kappa |x|) 1_{|x| < R0}`` at radial frequency s."""
    kappa = complex(kappa)
    j0 = special.j0(s * R0) if j0 is None else j0
    j1 = special.j1(s * R0) if j1 is None else j1
    H0 = special.hankel1(0, kappa * R0)
    H1 = special.hankel1(1, kappa * R0)
    num = 1 - 0.5j * np.pi * R0 * (kappa * j0 * H1 - s * j1 * H0)
    den = kappa ** 2 - s ** 2
    out = np.empty(np.shape(s), complex)
    near = np.abs(den) < 1e-7 * max(1.0, abs(kappa) ** 2)
    out[~near] = num[~near] / den[~near]
    if np.any(near):
        sn = s[near]
        d = 1e-4 * max(1.0, abs(kappa))
        out[near] = 0.5 * (truncated_free_symbol(kappa, sn + d, R0)
                           + truncated_free_symbol(kappa, np.abs(sn - d), R0))
    return out


def plane_wave_quadrature(zeta: np.ndarray, radius: float):
    """Nodes and weights for the smooth remainder ``H = G_zeta - G_outgoing``.

    Returns (kvec, w) with ``H(x) ~= sum_q w_q exp(i kvec_q . x)`` for
    ``|x| <= radius``.  ``kvec`` may be complex (evanescent waves).
    """
    zeta = np.asarray(zeta, complex)
    zI = zeta.imag
    kap = float(np.hypot(*zI))
    if kap == 0:
        raise SingularDenominator("plane-wave split needs Im zeta != 0")
    e1 = zI / kap
    e2 = np.array([-e1[1], e1[0]])
    Ep = complex(zeta @ zeta)
    A, B = Ep.real, Ep.imag
    if A <= 0:
        raise SingularDenominator("split kernel needs Re(zeta.zeta) > 0")
    t0 = np.sqrt(A)
    alpha = B / (2 * kap)
    ts2 = A + kap ** 2 - alpha ** 2
    if ts2 <= 0:
        return np.zeros((0, 2), complex), np.zeros(0, complex)
    ts = np.sqrt(ts2)
    ts_in = min(ts, t0)
    phis = np.arcsin(min(ts_in / t0, 1.0))
    q_in = int(np.ceil(t0 * radius * phis * 0.75)) + 24
    xg, wg = np.polynomial.legendre.leggauss(q_in)
    phi = phis * xg
    t = t0 * np.sin(phi)
    dt = t0 * np.cos(phi) * phis * wg
    if ts > t0:
        U = np.arccosh(ts / t0)
        q_out = int(np.ceil((ts - t0 + np.sqrt(ts2 - A)) * radius * 0.75)) + 16
        xu, wu = np.polynomial.legendre.leggauss(q_out)
        u = 0.5 * U * (xu + 1)
        tu = t0 * np.cosh(u)
        du = t0 * np.sinh(u) * 0.5 * U * wu
        t = np.concatenate([t, tu, -tu])
        dt = np.concatenate([dt, du, du])
    a = _upper_sqrt(Ep - t ** 2)
    w = 1j / (4 * np.pi) * dt / a
    kvec = a[:, None] * e1[None, :] + t[:, None] * e2[None, :]
    return kvec, w


@dataclass(eq=False)
class FaddeevKernel:
    """Convolution with the Faddeev Green's function on a spatial grid.

    ``k`` is the (complex) momentum.  On the isotropic variety ``k.k = E``;
    the directional offsets used for real momenta leave it by O(offset).
    """

    k: np.ndarray
    E: EnergyContext
    grid: SpatialGrid
    method: str = "auto"
    _parts: dict = field(default_factory=dict, repr=False)
    box: int = field(default=0, repr=False)

    def __post_init__(self):
        self.k = np.asarray(self.k, complex)
        self.E = as_energy(self.E)
        kap = float(np.hypot(*self.k.imag))
        if self.method == "auto":
            self.method = "split" if kap <= SPLIT_MAX_IMAG else "lattice"
        if self.method not in ("split", "lattice"):
            raise ValueError(f"unknown kernel method {self.method!r}")
        if kap == 0:
            raise SingularDenominator("real momentum: use a directional or offset variant")
        n, L = self.grid.n, self.grid.L
        self.box = (LATTICE_BOX if self.method == "lattice" else 2) * n
        if self.method == "lattice":
            xi = _box_geometry(n, L, LATTICE_BOX)[0]
            d = np.pi / (self.box * self.grid.h)  # half a lattice step
            x1 = xi[None, :] + d
            x2 = xi[:, None] + d
            den = x1 ** 2 + x2 ** 2 + 2 * (self.k[0] * x1 + self.k[1] * x2)
            if np.min(np.abs(den)) < 1e-13:
                raise SingularDenominator("lattice node on the singular set of the symbol")
            self._parts["symbol"] = -1.0 / den
            tw = np.exp(-1j * d * self.grid.h * np.arange(self.box))
            self._parts["twist"] = tw
        else:
            Ep = complex(self.k @ self.k)
            kappa = complex(_upper_sqrt(Ep))
            self._parts["symbol"] = _free_symbol_cached(n, L, round(kappa.real, 13),
                                                        round(kappa.imag, 13))
            radius = np.sqrt(2) * L + 1.0 + 2 * self.grid.h
            self._parts["waves"] = plane_wave_quadrature(self.k, radius)

    @property
    def imag_size(self) -> float:
        return float(np.hypot(*self.k.imag))

    # -- periodic part: returns Fourier coefficients of the convolution
    def _periodic_coeffs(self, f_full: np.ndarray) -> np.ndarray:
        n = self.grid.n
        N = self.box
        a = np.zeros((N, N), complex)
        if self.method == "lattice":
            tw = self._parts["twist"]
            a[:n, :n] = f_full * tw[None, :n] * tw[:n, None]
        else:
            a[:n, :n] = f_full * self._phase(+1)
        return np.fft.fft2(a) * self._parts["symbol"]

    def _phase(self, sign: int, pts=None) -> np.ndarray:
        """exp(sign * i k.x) on the grid (or at given points, shape (..., 2))."""
        if pts is None:
            X, Y = self.grid.mesh()
        else:
            X, Y = pts[..., 0], pts[..., 1]
        return np.exp(sign * 1j * (self.k[0] * X + self.k[1] * Y))

    def convolve(self, f_full: np.ndarray, out_mask=None) -> np.ndarray:
        """(g * f)(x_i) = sum_j g(x_i - x_j) f_j h^2 on the grid, f supported in D.

        With ``out_mask`` only the masked nodes are returned (flattened).
        """
        n = self.grid.n
        c = self._periodic_coeffs(f_full)
        out = np.fft.ifft2(c)[:n, :n]
        if self.method == "lattice":
            tw = self._parts["twist"]
            out = out / (tw[None, :n] * tw[:n, None])
            return out if out_mask is None else out[out_mask]
        out = out * self._phase(-1)
        src = f_full != 0
        if out_mask is None:
            return out + self._waves_apply(f_full, src, None)
        return out[out_mask] + self._waves_apply(f_full, src, out_mask)

    def _wave_mats(self, src_mask, out_mask):
        key = (src_mask.tobytes(), None if out_mask is None else out_mask.tobytes())
        cache = self._parts.setdefault("wave_cache", {})
        if key not in cache:
            kvec, w = self._parts["waves"]
            X, Y = self.grid.mesh()
            q = kvec - self.k[None, :]
            B = np.exp(-1j * (np.outer(q[:, 0], X[src_mask]) + np.outer(q[:, 1], Y[src_mask])))
            B *= (w * self.grid.h ** 2)[:, None]
            Xo, Yo = (X, Y) if out_mask is None else (X[out_mask], Y[out_mask])
            A = np.exp(1j * (np.outer(Xo.ravel(), q[:, 0]) + np.outer(Yo.ravel(), q[:, 1])))
            if len(cache) > 4:
                cache.clear()
            cache[key] = (A, B)
        return cache[key]

    def _waves_apply(self, f_full, src_mask, out_mask):
        kvec, w = self._parts["waves"]
        if w.size == 0:
            return 0.0
        A, B = self._wave_mats(src_mask, out_mask)
        r = A @ (B @ f_full[src_mask])
        return r.reshape(self.grid.n, self.grid.n) if out_mask is None else r

    def convolve_at(self, f_full: np.ndarray, pts: np.ndarray) -> np.ndarray:
        """Evaluate (g * f) at arbitrary points (shape (..., 2)) from the same discretization."""
        h = self.grid.h
        N = self.box
        c = self._periodic_coeffs(f_full) / N ** 2
        xi = 2 * np.pi * np.fft.fftfreq(N, h)
        x0 = self.grid.x[0]
        P = np.asarray(pts, float).reshape(-1, 2)
        if self.method == "lattice":
            xi = xi + np.pi / (N * h)
        Ex = np.exp(1j * np.outer(P[:, 0] - x0, xi))
        Ey = np.exp(1j * np.outer(P[:, 1] - x0, xi))
        per = np.einsum("pa,ab,pb->p", Ey, c, Ex)
        if self.method == "lattice":
            return per.reshape(np.shape(pts)[:-1])
        per = per * self._phase(-1, P)
        kvec, w = self._parts["waves"]
        if w.size:
            src = f_full != 0
            X, Y = self.grid.mesh()
            q = kvec - self.k[None, :]
            B = np.exp(-1j * (np.outer(q[:, 0], X[src]) + np.outer(q[:, 1], Y[src])))
            coef = (w * self.grid.h ** 2) * (B @ f_full[src])
            A = np.exp(1j * (np.outer(P[:, 0], q[:, 0]) + np.outer(P[:, 1], q[:, 1])))
            per = per + A @ coef
        return per.reshape(np.shape(pts)[:-1])

    def samples(self) -> ComplexField:
        """g on the difference lattice of the periodic box (index d <-> displacement d*h)."""
        N = self.box
        h = self.grid.h
        d = np.fft.fftfreq(N, 1.0 / N) * h
        DX, DY = np.meshgrid(d, d)
        if self.method == "lattice":
            idx = np.fft.fftfreq(N, 1.0 / N)
            twd = np.exp(-1j * np.pi / N * idx)
            vals = np.fft.ifft2(self._parts["symbol"]) / h ** 2
            # undo the half shift: g(d) = exp(i pi d/P) * periodic samples
            vals = vals / (twd[None, :] * twd[:, None])
        else:
            G = np.fft.ifft2(self._parts["symbol"]) / h ** 2
            kvec, w = self._parts["waves"]
            if w.size:
                G = G + (np.exp(1j * (np.outer(DX.ravel(), kvec[:, 0])
                                      + np.outer(DY.ravel(), kvec[:, 1]))) @ w).reshape(DX.shape)
            vals = G * np.exp(-1j * (self.k[0] * DX + self.k[1] * DY))
        return ComplexField(vals, self.grid.grid_id)


@lru_cache(maxsize=16)
def _free_symbol_cached(n, L, kr, ki):
    xi, s, R0, j0, j1 = _box_geometry(n, L)
    return truncated_free_symbol(complex(kr, ki), s, R0, j0, j1)


def faddeev_green(k, grid: SpatialGrid, E, method: str = "auto") -> FaddeevKernel:
    k = np.asarray(k, complex)
    return FaddeevKernel(k, as_energy(E), grid, method)


# ------------------------------------------------------------------ solves

@dataclass(eq=False)
class MuSolution:
    mu: ComplexField
    lam: Optional[complex]
    residual: float
    condition_estimate: float
    iterations: int = 0
    kernel: Optional[FaddeevKernel] = field(default=None, repr=False)
    density: Optional[np.ndarray] = field(default=None, repr=False)  # v*mu on the grid

    @property
    def values(self) -> np.ndarray:
        return self.mu.values

    def mu_at(self, pts: np.ndarray) -> np.ndarray:
        """mu at arbitrary points, consistent with the grid discretization."""
        pts = np.asarray(pts, float)
        if self.density is None or not np.any(self.density):
            return np.ones(pts.shape[:-1], complex)
        if self.kernel is None:
            raise ValueError("this solution was stored without its kernel")
        return 1.0 + self.kernel.convolve_at(self.density, pts)

    def psi_at(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, float)
        if self.kernel is None:
            raise ValueError("free solution carries no momentum")
        return self.mu_at(pts) * self.kernel._phase(+1, pts)


def solve_zeta(v: PotentialField, zeta, E, lam=None, method: str = "auto",
               tol: float = GMRES_TOL) -> MuSolution:
    """Solve ``mu = 1 + g(., zeta) * (v mu)`` for an arbitrary complex momentum."""
    E = as_energy(E)
    grid = v.grid
    ones = np.ones((grid.n, grid.n), complex)
    if v.is_zero:
        return MuSolution(ComplexField(ones, grid.grid_id), lam, 0.0, 1.0, 0, None, None)
    kern = faddeev_green(zeta, grid, E, method)
    vals = v.values
    supp = vals != 0
    vs = vals[supp]

    def full(u):
        f = np.zeros((grid.n, grid.n), complex)
        f[supp] = vs * u
        return f

    def apply(u):
        return u - kern.convolve(full(u), supp)

    b = np.ones(vs.size, complex)
    u, info = gmres(apply, b, x0=b, tol=tol, restart=GMRES_RESTART, maxiter=GMRES_MAXITER)
    dens = full(u)
    mu = 1.0 + kern.convolve(dens)
    res = float(np.max(np.abs(mu - 1.0 - kern.convolve(v.values * mu))))
    if not info.converged or not np.all(np.isfinite(mu)):
        raise NoConvergence(
            f"Lippmann-Schwinger solve stagnated at lambda={lam} "
            f"(relative residual {info.rel_residual:.2e}, condition ~{info.condition_estimate:.2e})",
            stage="solve_mu", lam=lam, condition=info.condition_estimate)
    return MuSolution(ComplexField(mu, grid.grid_id), lam, res, max(1.0, info.condition_estimate),
                      info.iterations, kern, v.values * mu)


def solve_mu(v: PotentialField, lam: complex, E, method: str = "auto") -> MuSolution:
    """Faddeev eigenfunction mu(., lambda) for lambda off the unit circle."""
    lam = complex(lam)
    if lam == 0:
        raise ZeroLambda("lambda must be nonzero")
    if abs(abs(lam) - 1.0) < 1e-14:
        raise SingularDenominator("lambda on the unit circle: use mu_pm")
    return solve_zeta(v, lambda_to_k(lam, E), E, lam, method)


def mu_pm(v: PotentialField, lam_on_T: complex, side: str, E, offset_h: float = OFFSET_H,
          method: str = "auto") -> MuSolution:
    """One-sided limits: ``plus`` is evaluated at lambda(1-h), ``minus`` at lambda(1+h)."""
    lam = complex(lam_on_T)
    if abs(abs(lam) - 1) > 1e-12:
        raise ValueError("mu_pm needs a unit-modulus lambda")
    if side not in ("plus", "minus"):
        raise ValueError("side must be 'plus' or 'minus'")
    fac = 1 - offset_h if side == "plus" else 1 + offset_h
    return solve_mu(v, lam * fac, E, method)


def mu_gamma(v: PotentialField, k_real, gamma, E, offset_h: float = OFFSET_H,
             method: str = "split") -> MuSolution:
    """Directional limit mu(x, k + i0 gamma), realized at ``k + i eps gamma`` with eps = h sqrt(E)."""
    E = as_energy(E)
    k_real = np.asarray(k_real, float)
    gamma = np.asarray(gamma, float)
    if abs(np.hypot(*gamma) - 1) > 1e-12:
        raise ValueError("gamma must be a unit vector")
    if abs(k_real @ k_real - E.E) > 1e-9 * (1 + E.E):
        raise ValueError("k must satisfy k.k = E")
    eps = offset_h * E.sqrtE
    return solve_zeta(v, k_real + 1j * eps * gamma, E, None, method)


def k_of_unit(lam: complex, E) -> np.ndarray:
    """Real momentum for |lambda| = 1: k = sqrt(E) (Re lambda, Im lambda)."""
    s = as_energy(E).sqrtE
    return np.array([s * lam.real, s * lam.imag])


def phi_plus(v: PotentialField, lam: complex, E, offset_h: float = OFFSET_H) -> MuSolution:
    """Outgoing solution at real momentum k(lambda), |lambda| = 1 (gamma = k/|k|)."""
    k = k_of_unit(complex(lam), E)
    return mu_gamma(v, k, k / np.hypot(*k), E, offset_h)


def detect_exceptional(v: PotentialField, E, grid: SpectralGrid, threshold=EXCEPTIONAL_COND,
                       method: str = "auto") -> list:
    """Annulus nodes where the solve fails or is ill-conditioned."""
    flagged = []
    if v.is_zero:
        return flagged
    for lam in grid.lam.ravel():
        try:
            sol = solve_mu(v, lam, E, method)
        except NoConvergence:
            flagged.append(complex(lam))
            continue
        if sol.condition_estimate > threshold:
            flagged.append(complex(lam))
    return flagged
