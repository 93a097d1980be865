"""Spatial and spectral grids, sampled fields, and the norms used in reports.

The spatial grid is an ``n x n`` lattice on ``[-L, L]^2`` with nodes
``x_j = -L + j*h``, ``h = 2L/n`` (the origin is a node).  The domain D is the
unit disc.  The spectral grid is a polar grid in the lambda plane, geometric
in the radius and symmetric under ``lambda -> 1/conj(lambda)``, plus a ring of
nodes on the unit circle.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, GridNotSymmetric, SupportViolatesD

D_RADIUS = 1.0
# radial offset realizing the one-sided limits at |lambda| = 1; the bias is O(h)
OFFSET_H = 1e-5

_GRID_REGISTRY: dict = {}


def register_grid(grid) -> str:
    _GRID_REGISTRY[grid.grid_id] = grid
    return grid.grid_id


def resolve_grid(grid_id: str):
    try:
        return _GRID_REGISTRY[grid_id]
    except KeyError:
        raise KeyError(f"unregistered grid {grid_id!r}") from None


@dataclass(frozen=True)
class EnergyContext:
    E: float

    def __post_init__(self):
        if not (np.isfinite(self.E) and self.E > 0):
            raise ConfigError(f"energy must be positive, got {self.E!r}")

    @property
    def sqrtE(self) -> float:
        return float(np.sqrt(self.E))


def as_energy(E) -> EnergyContext:
    return E if isinstance(E, EnergyContext) else EnergyContext(float(E))


@dataclass(frozen=True)
class SpatialGrid:
    n: int = 64
    L: float = 1.5

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 16 or self.n % 2:
            raise ConfigError(f"grid.n must be an even integer >= 16, got {self.n!r}")
        if not self.L >= D_RADIUS:
            raise ConfigError(f"grid.L must be at least {D_RADIUS}, got {self.L!r}")
        register_grid(self)

    @property
    def grid_id(self) -> str:
        return f"spatial:{self.n}:{self.L!r}"

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def x(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    def mesh(self):
        """Return (X, Y) with ``X[i, j] = x[j]``, ``Y[i, j] = x[i]`` (row index is y)."""
        return np.meshgrid(self.x, self.x)

    @property
    def z(self) -> np.ndarray:
        X, Y = self.mesh()
        return X + 1j * Y

    @property
    def disc_mask(self) -> np.ndarray:
        return np.abs(self.z) < D_RADIUS


@dataclass(frozen=True)
class ComplexField:
    values: np.ndarray
    grid_id: str

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field has non-finite entries")
        resolve_grid(self.grid_id)


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Real potential samples with support inside the unit disc.

    ``evaluator`` maps arrays of (x, y) to values and lets other solvers resample
    the potential exactly (the DtN interior grid differs from this one).
    """

    values: np.ndarray
    grid: SpatialGrid
    m: int = 4
    D_radius: float = D_RADIUS
    kind: str = "custom_samples"
    params: tuple = ()
    evaluator: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        vals = np.asarray(self.values)
        if vals.shape != (self.grid.n, self.grid.n):
            raise ConfigError("potential shape does not match its grid")
        if np.iscomplexobj(vals) or not np.all(np.isfinite(vals)):
            raise ConfigError("potential values must be finite reals")
        if self.D_radius > self.grid.L:
            raise ConfigError("D radius exceeds the grid half-width")
        if np.any(vals[~self.support_mask] != 0.0):
            raise SupportViolatesD("potential is nonzero outside D")

    @property
    def support_mask(self) -> np.ndarray:
        return self.grid.disc_mask

    @property
    def is_zero(self) -> bool:
        return not np.any(self.values)

    def sample(self, x, y) -> np.ndarray:
        if self.evaluator is not None:
            return self.evaluator(np.asarray(x, float), np.asarray(y, float))
        from scipy.interpolate import RectBivariateSpline

        spl = RectBivariateSpline(self.grid.x, self.grid.x, self.values.T, kx=3, ky=3)
        out = spl.ev(np.asarray(x, float), np.asarray(y, float))
        return np.where(np.hypot(x, y) < self.D_radius, out, 0.0)

    def scaled(self, c: float) -> "PotentialField":
        ev = None if self.evaluator is None else (lambda x, y, f=self.evaluator: c * f(x, y))
        return PotentialField(c * self.values, self.grid, self.m, self.D_radius,
                              self.kind, self.params, ev)


def _bump_profile(rho2: np.ndarray, order: float) -> np.ndarray:
    out = np.zeros_like(rho2)
    inside = rho2 < 1.0
    if order == 0:
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    else:
        out[inside] = (1.0 - rho2[inside]) ** order
    return out


def bump_evaluator(amplitude, radius, cx=0.0, cy=0.0, order=0.0):
    def ev(x, y):
        rho2 = ((np.asarray(x) - cx) ** 2 + (np.asarray(y) - cy) ** 2) / radius ** 2
        return amplitude * _bump_profile(rho2, order)
    return ev


def bump_smoothness(order: float, default_m: int = 4) -> int:
    """Smoothness tag of the bump family.

    The C-infinity bump (order 0) admits any tag; the power bump
    ``(1-rho^2)^order`` has a Fourier envelope decaying like ``|p|^-(order+3/2)``,
    which is what the decay checks see.
    """
    return int(default_m) if order == 0 else int(round(order + 1.5))


def build_potential(kind: str, params: Sequence[float] = (), grid: SpatialGrid | None = None,
                    *, order: float = 0.0, m: int | None = None) -> PotentialField:
    """Build a named potential on ``grid``.

    kinds and positional params:
      zero          -- none
      bump          -- amplitude, radius[, cx, cy]
      two_bumps     -- amp1, amp2, radius, cx, cy; second centre is (-cx, -cy)
      custom_samples-- use :func:`potential_from_samples`
    ``order`` selects the profile: 0 is the C-infinity bump, otherwise the
    power bump ``(1 - rho^2)^order``.
    """
    grid = grid or SpatialGrid()
    params = tuple(float(p) for p in params)
    X, Y = grid.mesh()
    if kind == "zero":
        ev = lambda x, y: np.zeros(np.broadcast(x, y).shape)
    elif kind == "bump":
        if len(params) not in (2, 4):
            raise ConfigError("bump needs amplitude, radius[, cx, cy]")
        a, R = params[:2]
        cx, cy = params[2:] if len(params) == 4 else (0.0, 0.0)
        _check_inside(R, cx, cy)
        ev = bump_evaluator(a, R, cx, cy, order)
    elif kind == "two_bumps":
        if len(params) != 5:
            raise ConfigError("two_bumps needs amp1, amp2, radius, cx, cy")
        a1, a2, R, cx, cy = params
        _check_inside(R, cx, cy)
        e1 = bump_evaluator(a1, R, cx, cy, order)
        e2 = bump_evaluator(a2, R, -cx, -cy, order)
        ev = lambda x, y: e1(x, y) + e2(x, y)
    elif kind == "custom_samples":
        raise ConfigError("custom_samples potentials are built with potential_from_samples")
    else:
        raise ConfigError(f"unknown potential kind {kind!r}")
    vals = np.asarray(ev(X, Y), float)
    vals[~grid.disc_mask] = 0.0
    mt = m if m is not None else bump_smoothness(order)
    return PotentialField(vals, grid, mt, D_RADIUS, kind, params, ev)


def potential_from_samples(values, grid: SpatialGrid, m: int = 2) -> PotentialField:
    vals = np.array(values, dtype=float)
    if vals.shape != (grid.n, grid.n):
        raise ConfigError("sample array does not match the grid")
    if np.any(vals[~grid.disc_mask] != 0.0):
        raise SupportViolatesD("samples are nonzero outside D")
    return PotentialField(vals, grid, m, D_RADIUS, "custom_samples", ())


def _check_inside(R, cx, cy):
    if R <= 0:
        raise ConfigError("bump radius must be positive")
    if np.hypot(cx, cy) + R >= D_RADIUS:
        raise SupportViolatesD(
            f"bump of radius {R} at ({cx}, {cy}) leaks outside the unit disc")


@dataclass(frozen=True)
class SpectralGrid:
    """Polar lambda-grid: geometric radii symmetric about 1, equispaced angles.

    Radii are ``exp(s_i)``, ``s_i = (i - (N-1)/2) * ds``, so every radius has its
    reciprocal on the grid and 1 itself is never a node.
    """

    lambda_max: float = 8.0
    n_radii: int = 64
    n_theta: int = 64
    n_circle: int = 256
    offset_h: float = OFFSET_H

    def __post_init__(self):
        if not self.lambda_max > 1:
            raise ConfigError("spectral.lambda_max must exceed 1")
        if self.n_radii < 4 or self.n_radii % 2:
            raise ConfigError("spectral.n_radii must be an even integer >= 4")
        if self.n_theta < 4 or self.n_circle < 4:
            raise ConfigError("angular node counts must be >= 4")
        gap = 1.0 - np.exp(-0.5 * self.ds)
        if not 0 < self.offset_h < gap:
            raise ConfigError(f"spectral.offset_h must lie in (0, {gap:.3g})")
        register_grid(self)

    @property
    def grid_id(self) -> str:
        return (f"spectral:{self.lambda_max!r}:{self.n_radii}:{self.n_theta}:"
                f"{self.n_circle}:{self.offset_h!r}")

    @property
    def ds(self) -> float:
        return 2.0 * np.log(self.lambda_max) / (self.n_radii - 1)

    @property
    def log_radii(self) -> np.ndarray:
        return (np.arange(self.n_radii) - 0.5 * (self.n_radii - 1)) * self.ds

    @property
    def radii(self) -> np.ndarray:
        return np.exp(self.log_radii)

    @property
    def lambda_min(self) -> float:
        return 1.0 / self.lambda_max

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_theta) / self.n_theta

    @property
    def circle_angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.n_circle) / self.n_circle

    @property
    def circle_nodes(self) -> np.ndarray:
        return np.exp(1j * self.circle_angles)

    @property
    def lam(self) -> np.ndarray:
        """Annulus nodes, shape (n_radii, n_theta)."""
        return self.radii[:, None] * np.exp(1j * self.angles)[None, :]

    @property
    def inner_index(self) -> int:
        """Number of radii below 1."""
        return self.n_radii // 2

    def cell_areas(self) -> np.ndarray:
        """Polar cell areas per radius; the innermost cell reaches the origin."""
        s = self.log_radii
        lo = np.exp(2 * (s - 0.5 * self.ds))
        lo[0] = 0.0
        hi = np.exp(2 * (s + 0.5 * self.ds))
        return 0.5 * (hi - lo) * (2 * np.pi / self.n_theta)

    def check_symmetric(self):
        r = self.radii
        if not np.allclose(r * r[::-1], 1.0, rtol=1e-12, atol=0):
            raise GridNotSymmetric("radii are not closed under inversion")


# ---------------------------------------------------------------- norms

_D1 = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0


def _fd4(a: np.ndarray, axis: int, h: float) -> np.ndarray:
    out = np.zeros_like(a)
    for w, s in zip(_D1, (-2, -1, 0, 1, 2)):
        if w:
            out += w * np.roll(a, -s, axis=axis)
    return out / h


def sobolev_norm_m1(v: PotentialField, m: int) -> float:
    """max over |J| <= m of the L1 norm of the derivative, 4th-order differences."""
    if m < 0:
        raise ConfigError("m must be nonnegative")
    h = v.grid.h
    pad = 2 * (m + 1)
    a = np.pad(np.asarray(v.values, float), pad)
    best = 0.0
    rows = [a]
    for order in range(m + 1):
        if order:
            # next order: d/dx of every entry plus d/dy of the last one
            rows = [_fd4(r, 1, h) for r in rows] + [_fd4(rows[-1], 0, h)]
        for r in rows:
            best = max(best, float(np.sum(np.abs(r)) * h * h))
    return best


def fourier_transform(v: PotentialField, pad: int = 2, shift=(0.0, 0.0)):
    """Return (p, vhat) with vhat(p) = (2pi)^-2 sum exp(i p.x) v h^2 on the FFT lattice.

    ``p`` is a 1-D array of lattice frequencies along each axis; ``shift`` adds a
    fixed offset to every frequency.
    """
    g = v.grid
    N = pad * g.n
    a = np.zeros((N, N))
    a[:g.n, :g.n] = v.values
    x0 = g.x[0]
    idx = np.arange(N)
    xs = x0 + g.h * idx
    sx, sy = shift
    a = a * np.exp(1j * (sx * xs[None, :] + sy * xs[:, None]))
    p = 2 * np.pi * np.fft.fftfreq(N, d=g.h)
    # exp(i p x) with x = x0 + j h -> ifft gives sum exp(+i 2pi kj/N)
    F = np.fft.ifft2(a) * N * N
    F *= np.exp(1j * (p[None, :] * x0 + p[:, None] * x0))
    return p, F * g.h ** 2 / (2 * np.pi) ** 2


def weighted_fourier_norm(v: PotentialField, m: int, alpha: float = 0.5) -> float:
    """sup |W vhat| + sup |xi|^-alpha |W vhat(p+xi) - W vhat(p)| with W = (1+|p|^2)^(m/2)."""
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie in (0, 1)")
    p, F = fourier_transform(v)
    P2 = p[None, :] ** 2 + p[:, None] ** 2
    W = (1 + P2) ** (m / 2)
    base = W * F
    val = float(np.max(np.abs(base)))
    hol = 0.0
    for ang in np.arange(8) * np.pi / 4:
        for mag in (0.25, 0.5, 1.0):
            sx, sy = mag * np.cos(ang), mag * np.sin(ang)
            _, Fs = fourier_transform(v, shift=(sx, sy))
            Ws = (1 + (p[None, :] + sx) ** 2 + (p[:, None] + sy) ** 2) ** (m / 2)
            hol = max(hol, float(np.max(np.abs(Ws * Fs - base))) / mag ** alpha)
    return val + hol


def lp_nu_norm(f, grid: SpectralGrid, p: float, nu: float) -> float:
    """||f||_{L^p(|l|<=1)} + || |l|^-nu f(1/conj l) ||_{L^p(|l|<=1)} by polar cells."""
    grid.check_symmetric()
    vals = np.asarray(getattr(f, "values", f))
    if vals.shape != (grid.n_radii, grid.n_theta):
        raise ConfigError("field does not live on this spectral grid")
    k = grid.inner_index
    w = grid.cell_areas()[:k]
    t = grid.radii[:k]
    inner = vals[:k]
    outer = vals[::-1][:k] * (t ** (-nu))[:, None]  # radius 1/t mirrored onto t
    a = np.sum(w[:, None] * np.abs(inner) ** p) ** (1 / p)
    b = np.sum(w[:, None] * np.abs(outer) ** p) ** (1 / p)
    return float(a + b)


def sup_norm_D(values, grid: SpatialGrid) -> float:
    vals = np.asarray(values)
    return float(np.max(np.abs(vals[grid.disc_mask])))
